"""Tests of the run manifest"""

import pytest

from hsa_lab.manifest import MANIFEST_FILE, RunManifest
from hsa_lab.runtime_arguments import tool_version

# pylint: disable=missing-function-docstring


def test_write_and_read(tmp_path):
    manifest = RunManifest(
        command="eval",
        config_hash="abc",
        seed=3,
        grids=["grid_sniah.csv"],
        figures=["heatmap_sniah.svg"],
        records=["records_sniah.jsonl"],
        source_checkpoint="runs/micro/checkpoints/phase01_pretrain_step000004.ckpt",
    )
    assert manifest.tool_version == tool_version()
    assert manifest.artifacts() == ["grid_sniah.csv", "heatmap_sniah.svg", "records_sniah.jsonl"]

    assert not RunManifest.exists(tmp_path)
    path = manifest.write(tmp_path)
    assert path.name == MANIFEST_FILE
    assert RunManifest.exists(tmp_path)
    assert RunManifest.read(tmp_path) == manifest


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError, match="no manifest found in"):
        RunManifest.read(tmp_path)

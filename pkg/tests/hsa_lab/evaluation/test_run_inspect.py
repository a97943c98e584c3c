"""Functional tests for checkpoint inspection"""

import numpy as np
import pytest

import hsa_lab.evaluation.run_inspect as runner
import hsa_lab.file_io as lab_io
from hsa_lab.evaluation.arguments import InspectArguments
from hsa_lab.manifest import RunManifest
from hsa_lab.model.decoder import HSAModel

# pylint: disable=missing-function-docstring


def test_empty_args():
    """Runner should fail with empty arguments"""
    with pytest.raises(TypeError, match="args is required"):
        runner.run(None)


def test_bad_args():
    """Runner should fail with mis-typed arguments"""
    with pytest.raises(TypeError, match="InspectArguments"):
        runner.run({"checkpoint": "run"})


def test_default_probe_length(micro_run_config):
    assert runner.default_probe_length(HSAModel(micro_run_config.model)) == 256


def test_inspect_run(micro_run_dir, micro_run_config, tmp_path):
    RunManifest(command="train", config_hash=micro_run_config.config_hash()).write(micro_run_dir)
    args = InspectArguments(checkpoint=micro_run_dir, output_path=tmp_path, n_probes=2, progress_bar=False)
    result = runner.run(args)

    assert result.header["extra"]["phase_name"] == "pretrain"
    assert lab_io.load_json_file(args.run_path / "checkpoint_header.json") == result.header
    train_manifest = lab_io.load_json_file(args.run_path / "train_manifest.json")
    assert train_manifest["command"] == "train"

    parameters = result.param_stats
    assert "embed.weight" in set(parameters["name"])
    assert parameters["size"].sum() == HSAModel(micro_run_config.model).num_parameters

    retrieval = result.retrieval_stats
    assert retrieval["layer"].tolist() == list(micro_run_config.model.hsa_layers)
    row = retrieval.iloc[0]
    assert row["tokens"] > 0
    assert 0.0 <= row["mean_entropy"] <= row["max_entropy"] + 1e-6
    assert row["max_entropy"] == pytest.approx(np.log(2))
    assert 0.0 < row["mean_selected"] <= 2.0
    ## selected chunks always lie strictly in the past
    assert row["mean_chunk_distance"] >= 1.0

    manifest = RunManifest.read(args.run_path)
    assert manifest.command == "inspect"
    assert manifest.records == ["checkpoint_header.json", "train_manifest.json"]
    assert manifest.metrics == ["param_stats.csv", "retrieval_stats.csv"]
    assert manifest.architecture_hash == micro_run_config.model.architecture_hash()
    assert "parameters:" in result.summary()

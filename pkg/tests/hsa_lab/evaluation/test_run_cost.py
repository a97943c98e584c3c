"""Functional tests for the cost command"""

import pandas as pd
import pytest

import hsa_lab.evaluation.run_cost as runner
import hsa_lab.file_io as lab_io
from hsa_lab.evaluation.arguments import CostArguments
from hsa_lab.evaluation.cost_model import crossover_length
from hsa_lab.manifest import RunManifest

# pylint: disable=missing-function-docstring


def test_empty_args():
    """Runner should fail with empty arguments"""
    with pytest.raises(TypeError, match="args is required"):
        runner.run(None)


def test_bad_args():
    """Runner should fail with mis-typed arguments"""
    with pytest.raises(TypeError, match="CostArguments"):
        runner.run({"config": "micro"})


def test_cost_run(tmp_path):
    args = CostArguments(
        config="desk-warmup", lengths="1024,4096,16384", output_path=tmp_path, progress_bar=False
    )
    report = runner.run(args)

    frame = pd.read_csv(args.run_path / "cost.csv")
    assert frame["length"].tolist() == [1024, 4096, 16384]
    assert frame["full_flops"].tolist() == report.to_frame()["full_flops"].tolist()

    crossover = lab_io.load_json_file(args.run_path / "crossover.json")
    assert crossover["crossover"] == crossover_length(args.model_config)
    assert crossover["precision"] == 32
    assert crossover["model"]["chunk_size"] == args.model_config.chunk_size

    manifest = RunManifest.read(args.run_path)
    assert manifest.command == "cost"
    assert manifest.architecture_hash == args.model_config.architecture_hash()
    for artifact in manifest.artifacts():
        assert (args.run_path / artifact).exists()
    assert (args.run_path / "cost.svg").read_text().lstrip().startswith("<?xml")

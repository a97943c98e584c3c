"""Tests of argument validation for the evaluation, cost and inspect commands"""

import pytest

from hsa_lab.evaluation.arguments import (
    CostArguments,
    EvalArguments,
    InspectArguments,
    find_run_config,
    resolve_checkpoint,
)
from hsa_lab.model.config import ConfigValidationError, ModelConfig

# pylint: disable=missing-function-docstring


def test_resolve_checkpoint(micro_run_dir, tmp_path):
    latest = micro_run_dir / "checkpoints" / "phase01_pretrain_step000004.ckpt"
    assert resolve_checkpoint(micro_run_dir) == resolve_checkpoint(latest)
    assert resolve_checkpoint(micro_run_dir).name == latest.name
    assert find_run_config(resolve_checkpoint(micro_run_dir)).name == "micro"
    with pytest.raises(FileNotFoundError, match="no checkpoint found at"):
        resolve_checkpoint(tmp_path / "missing")
    with pytest.raises(FileNotFoundError, match="no checkpoint found at"):
        resolve_checkpoint(tmp_path)


def test_eval_defaults(micro_run_dir, tmp_path):
    """Grid defaults come from the run config saved with the training run."""
    args = EvalArguments(checkpoint=micro_run_dir, output_path=tmp_path / "out", progress_bar=False)
    assert args.output_artifact_name == "eval_phase01_pretrain_step000004"
    assert args.run_config.name == "micro"
    assert args.task == "sniah"
    assert args.lengths == [128, 256]
    assert args.depths == [0.0, 1.0]
    assert args.samples_per_cell == 2
    assert args.in_domain_length == 128
    assert args.top_k_values == [None]

    provenance = args.provenance_dict()
    assert provenance["lengths"] == [128, 256]
    assert provenance["top_k"] == [None]


def test_eval_overrides(micro_run_dir, tmp_path):
    args = EvalArguments(
        checkpoint=micro_run_dir,
        output_path=tmp_path / "out",
        task="mqniah",
        lengths="512,1024",
        depths="0, 0.5",
        samples_per_cell=5,
        top_k=4,
        eval_top_k="4,8",
        in_domain_length=64,
        progress_bar=False,
    )
    assert args.task == "mqniah"
    assert args.lengths == [512, 1024]
    assert args.depths == [0.0, 0.5]
    ## the explicit top-k is not evaluated twice
    assert args.top_k_values == [4, 8]
    assert args.in_domain_length == 64


def test_eval_invalid(micro_run_dir, tmp_path):
    output_path = tmp_path / "out"
    with pytest.raises(ValueError, match="checkpoint is required"):
        EvalArguments(output_path=output_path)
    with pytest.raises(ValueError, match="task should be one of"):
        EvalArguments(checkpoint=micro_run_dir, output_path=output_path, task="selfcopy")
    with pytest.raises(ValueError, match="lengths should contain only positive values"):
        EvalArguments(checkpoint=micro_run_dir, output_path=output_path, lengths="128,-1")
    with pytest.raises(ValueError, match="depths should be between"):
        EvalArguments(checkpoint=micro_run_dir, output_path=output_path, depths="1.5")
    with pytest.raises(ValueError, match="top_k should be positive"):
        EvalArguments(checkpoint=micro_run_dir, output_path=output_path, top_k=0)
    with pytest.raises(ValueError, match="last_n should be positive"):
        EvalArguments(checkpoint=micro_run_dir, output_path=output_path, last_n=0)
    with pytest.raises(ConfigValidationError):
        EvalArguments(checkpoint=micro_run_dir, output_path=output_path, config={"name": "broken"})


def test_cost_arguments(tmp_path):
    args = CostArguments(config="micro", output_path=tmp_path, progress_bar=False)
    assert args.output_artifact_name == "cost_micro"
    assert args.lengths[0] == 1024
    assert args.lengths[-1] == 2**24
    assert len(args.lengths) == 15
    assert args.model_config.chunk_size == 8

    config = ModelConfig(chunk_size=32, top_k=4)
    args = CostArguments(config=config, lengths="4096", output_path=tmp_path, progress_bar=False)
    assert args.output_artifact_name == "cost_model"
    assert args.model_config is config
    assert args.lengths == [4096]

    with pytest.raises(ValueError, match="config is required"):
        CostArguments(output_path=tmp_path)
    with pytest.raises(ValueError, match="lengths should not be empty"):
        CostArguments(config="micro", lengths="", output_path=tmp_path)


def test_inspect_arguments(micro_run_dir, tmp_path):
    args = InspectArguments(checkpoint=micro_run_dir, output_path=tmp_path, progress_bar=False)
    assert args.output_artifact_name == "inspect_phase01_pretrain_step000004"
    assert args.task == "sniah"
    assert args.n_probes == 4

    with pytest.raises(ValueError, match="checkpoint is required"):
        InspectArguments(output_path=tmp_path)
    with pytest.raises(ValueError, match="n_probes should be positive"):
        InspectArguments(checkpoint=micro_run_dir, output_path=tmp_path, n_probes=0)
    with pytest.raises(ValueError, match="probe_length should be positive"):
        InspectArguments(checkpoint=micro_run_dir, output_path=tmp_path, probe_length=0)
    with pytest.raises(ValueError, match="task should be one of"):
        InspectArguments(checkpoint=micro_run_dir, output_path=tmp_path, task="lm")

"""Tests of run configs: validation, presets and per-phase runtime knobs"""

import copy
import json

import pytest

from hsa_lab.model.config import ConfigValidationError
from hsa_lab.train.phases import PhaseSpec, RunConfig, load_run_config, preset_names

# pylint: disable=missing-function-docstring, redefined-outer-name


@pytest.fixture
def micro_dict(micro_run_config):
    return micro_run_config.to_dict()


def test_presets():
    names = preset_names()
    expected = {"micro", "desk-warmup", "desk-nowarmup", "desk-selfcopy", "seesaw-128", "seesaw-512"}
    assert expected <= set(names)
    for name in names:
        run_config = load_run_config(name)
        assert run_config.name == name
        assert run_config.model.architecture_hash()


LADDER_PRESETS = (
    "desk-warmup",
    "desk-selfcopy",
    "desk-nowarmup",
    "effective-short",
    "effective-long",
    "seesaw-128",
    "seesaw-512",
)


@pytest.mark.parametrize("name", LADDER_PRESETS)
def test_ladder_presets(name):
    """Desk ladders scale the long-context recipe: warm-up and pre-training at 2048 tokens,
    then mid-training at twice the context with retrieval covering the whole sequence."""
    run_config = load_run_config(name)
    phases = {phase.kind: phase for phase in run_config.phases}
    assert run_config.phases[-1].kind == "midtrain"
    assert all(phase.schedule == "constant" for phase in run_config.phases)

    pretrain, midtrain = phases["pretrain"], phases["midtrain"]
    assert pretrain.context_length == 2048
    assert midtrain.context_length == 2 * pretrain.context_length
    assert midtrain.top_k == "full"
    assert midtrain.resolve_top_k(run_config.model) * run_config.model.chunk_size >= midtrain.context_length
    assert run_config.in_domain_length == midtrain.context_length

    if "warmup" in phases:
        assert phases["warmup"].context_length == 2048
        assert phases["warmup"].swa_window == 128


def test_micro(micro_run_config):
    assert [phase.name for phase in micro_run_config.phases] == ["warmup", "pretrain"]
    warmup, pretrain = micro_run_config.phases
    ## "full" covers every chunk of the warm-up context
    assert warmup.resolve_top_k(micro_run_config.model) == 8
    assert warmup.resolve_top_k(micro_run_config.model, length=100) == 13
    runtime = warmup.runtime_config(micro_run_config.model)
    assert (runtime.swa_window, runtime.top_k) == (8, 8)
    ## pretrain keeps the model's knobs
    runtime = pretrain.runtime_config(micro_run_config.model)
    assert (runtime.swa_window, runtime.top_k) == (16, 2)
    assert micro_run_config.in_domain_length == 128


def test_round_trip(micro_run_config, micro_dict, tmp_path):
    restored = RunConfig.from_dict(micro_dict)
    assert restored == micro_run_config
    assert restored.config_hash() == micro_run_config.config_hash()

    path = tmp_path / "micro_copy.json"
    path.write_text(json.dumps(micro_dict))
    assert load_run_config(path).config_hash() == micro_run_config.config_hash()
    assert load_run_config(str(path)).name == "micro"
    assert load_run_config(micro_run_config) is micro_run_config


def test_missing_config():
    with pytest.raises(FileNotFoundError, match="no config file or preset named"):
        load_run_config("no-such-preset")


def test_token_budget():
    phase = PhaseSpec(name="budgeted", context_length=64, batch_size=2, steps=3, token_budget=1000)
    assert phase.total_steps == 8
    assert PhaseSpec(name="counted", steps=3).total_steps == 3


def invalid(micro_dict, edit):
    values = copy.deepcopy(micro_dict)
    edit(values)
    with pytest.raises(ConfigValidationError) as error:
        RunConfig.from_dict(values)
    return error.value.field


def test_unknown_and_missing_fields(micro_dict):
    assert invalid(micro_dict, lambda v: v.update(optimizer="sgd")) == "optimizer"
    assert invalid(micro_dict, lambda v: v["phases"][1].update(dropout=0.1)) == "phases[1].dropout"
    assert invalid(micro_dict, lambda v: v["phases"][0].pop("name")) == "phases[0].name"
    assert invalid(micro_dict, lambda v: v["evaluation"].update(metric="f1")) == "evaluation.metric"
    assert invalid(micro_dict, lambda v: v["model"].update(dropout=0.1)) == "dropout"
    assert invalid(micro_dict, lambda v: v.pop("phases")) == "phases"


def test_phase_values(micro_dict):
    def set_pretrain(key, value):
        return lambda v: v["phases"][1].update({key: value})

    assert invalid(micro_dict, set_pretrain("kind", "finetune")) == "phases[pretrain].kind"
    assert invalid(micro_dict, set_pretrain("context_length", 0)) == "phases[pretrain].context_length"
    assert invalid(micro_dict, set_pretrain("top_k", "all")) == "phases[pretrain].top_k"
    assert invalid(micro_dict, set_pretrain("mixture", {"wiki": 1.0})) == "phases[pretrain].mixture"
    assert invalid(micro_dict, set_pretrain("schedule", "linear")) == "phases[pretrain].schedule"
    assert invalid(micro_dict, set_pretrain("probe_tasks", ["qa"])) == "phases[pretrain].probe_tasks"
    assert invalid(micro_dict, set_pretrain("probe_probability", 2.0)) == "phases[pretrain].probe_probability"


def test_ladder_rules(micro_dict):
    ## duplicate phase names
    assert invalid(micro_dict, lambda v: v["phases"][1].update(name="warmup")) == "phases"
    assert invalid(micro_dict, lambda v: v.update(schema_version=2)) == "schema_version"
    assert invalid(micro_dict, lambda v: v.update(warmup_strategy="magic")) == "warmup_strategy"
    ## a warm-up phase needs a warm-up strategy
    assert invalid(micro_dict, lambda v: v.update(warmup_strategy="none")) == "phases[warmup].kind"
    ## short-swa-full-hsa needs top-k covering the whole warm-up context
    assert invalid(micro_dict, lambda v: v["phases"][0].update(top_k=4)) == "phases[warmup].top_k"
    ## self-copy warm-up needs self-copy data
    assert invalid(micro_dict, lambda v: v.update(warmup_strategy="self-copy")) == "phases[warmup].mixture"


def test_completion_criterion(micro_dict):
    ## a threshold needs periodic probes
    def no_probes(values):
        values["phases"][1].update(completion_threshold=0.9, probe_every=0)

    assert invalid(micro_dict, no_probes) == "phases[pretrain].probe_every"

    ## probes shorter than four windows cannot show retrieval beyond the window
    def short_probes(values):
        values["phases"][1].update(completion_threshold=0.9, probe_length=32)

    assert invalid(micro_dict, short_probes) == "phases[pretrain].probe_length"

    values = copy.deepcopy(micro_dict)
    values["phases"][1].update(completion_threshold=0.9, probe_length=64)
    assert RunConfig.from_dict(values).phases[1].completion_threshold == 0.9


def test_evaluation_values(micro_dict):
    assert invalid(micro_dict, lambda v: v["evaluation"].update(task="selfcopy")) == "evaluation.task"
    assert invalid(micro_dict, lambda v: v["evaluation"].update(lengths=[])) == "evaluation.lengths"
    assert invalid(micro_dict, lambda v: v["evaluation"].update(depths=[1.5])) == "evaluation.depths"
    assert invalid(micro_dict, lambda v: v["evaluation"].update(eval_top_k=[0])) == "evaluation.eval_top_k"

"""Tests of the closed-form attention cost model"""

import importlib

import pytest

from hsa_lab.model.config import ModelConfig

# pylint: disable=missing-function-docstring, redefined-outer-name

# The package re-exports the ``cost_model`` function, which shadows the submodule attribute.
costs = importlib.import_module("hsa_lab.evaluation.cost_model")


@pytest.fixture
def config():
    return ModelConfig(
        d_model=64, n_layers=4, n_heads=4, chunk_size=32, top_k=8, swa_window=128, encoder_depth=1
    )


def test_closed_form(config):
    """Hand-computed terms at 1024 tokens with one HSA layer."""
    assert config.hsa_layers == (2,)
    n = 1024
    assert costs.full_attention_flops(n, config) == 536_870_912
    assert costs.swa_flops(n, config) == 67_108_864
    assert costs.hsa_attend_flops(n, config) == 33_554_432
    assert costs.retrieval_flops(n, config) == 2_097_152
    ## 32 chunks of 33 tokens (chunk plus summary token)
    assert costs.encoder_flops(n, config) == 4_460_544
    assert costs.hsa_total_flops(n, config) == 107_220_992


def test_scaling(config):
    """Full attention is quadratic; the HSA attend term is exactly linear."""
    for n in (256, 4096, 65536):
        assert costs.full_attention_flops(2 * n, config) == 4 * costs.full_attention_flops(n, config)
        assert costs.hsa_attend_flops(2 * n, config) == 2 * costs.hsa_attend_flops(n, config)
        ## the window saturates
        assert costs.swa_flops(2 * n, config) == 2 * costs.swa_flops(n, config)


def test_crossover(config):
    crossover = costs.crossover_length(config)
    ## inside the window the hybrid already pays for full attention
    assert crossover > config.swa_window
    assert costs.hsa_total_flops(crossover, config) < costs.full_attention_flops(crossover, config)
    assert costs.hsa_total_flops(crossover - 1, config) >= costs.full_attention_flops(crossover - 1, config)


def test_kv_bytes(config):
    assert costs.full_kv_bytes(1024, config) == 2_097_152
    ## window caches, chunk memory and landmarks
    assert costs.hsa_kv_bytes(1024, config) == 794_624
    assert costs.hsa_kv_bytes(1024, config, precision=64) == 2 * 794_624
    assert costs.full_kv_bytes(2048, config) == 2 * costs.full_kv_bytes(1024, config)


def test_report(config):
    report = costs.cost_model(config, [1024, 2048, 4096])
    frame = report.to_frame()
    assert list(frame.columns) == costs.COST_COLUMNS
    assert frame["length"].tolist() == [1024, 2048, 4096]
    assert frame.loc[0, "hsa_total_flops"] == 107_220_992
    assert report.crossover == costs.crossover_length(config)
    assert f"crossover length: {report.crossover} tokens" in report.summary()


def test_invalid_report(config):
    with pytest.raises(ValueError, match="lengths should be positive"):
        costs.cost_model(config, [])
    with pytest.raises(ValueError, match="lengths should be positive"):
        costs.cost_model(config, [1024, 0])
    with pytest.raises(ValueError, match="precision"):
        costs.cost_model(config, [1024], precision=16)

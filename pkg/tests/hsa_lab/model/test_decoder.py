"""Tests of the hybrid decoder forward pass"""

import dataclasses

import numpy as np
import numpy.testing as npt
import pytest

from hsa_lab.model.config import ModelConfig
from hsa_lab.model.decoder import HSAModel, validate_tokens
from hsa_lab.numerics.gradcheck import check_gradients
from hsa_lab.numerics.tensor import no_grad

# pylint: disable=missing-function-docstring


def random_tokens(rng, length, vocab=264):
    return rng.integers(0, vocab, size=length)


def test_logits_shape(tiny_model, rng):
    tokens = random_tokens(rng, 13)
    with no_grad():
        logits = tiny_model.forward(tokens)
    assert logits.shape == (13, 264)
    assert logits.dtype == np.float64
    assert np.isfinite(logits.data).all()


def test_short_sequence(tiny_model, rng):
    """Sequences shorter than one chunk have an empty store and still run."""
    with no_grad():
        logits, trace = tiny_model.forward(random_tokens(rng, 3), return_trace=True)
    assert logits.shape == (3, 264)
    assert trace.store.num_chunks == 0
    assert not trace.selections[2].valid.any()

    with no_grad():
        logits = tiny_model.forward([7])
    assert logits.shape == (1, 264)


@pytest.mark.slow
@pytest.mark.timeout(300)
def test_causality(tiny_model, rng):
    """Changing token j never changes the logits of positions before j, bit for bit."""
    for _ in range(50):
        length = int(rng.integers(16, 41))
        tokens = random_tokens(rng, length)
        with no_grad():
            before = tiny_model.forward(tokens).data
            for position in rng.choice(length, size=10, replace=False):
                changed = tokens.copy()
                changed[position] = (changed[position] + rng.integers(1, 264)) % 264
                after = tiny_model.forward(changed).data
                npt.assert_array_equal(after[:position], before[:position])
                assert not np.array_equal(after[position], before[position])


def test_trace(tiny_model, rng):
    tokens = random_tokens(rng, 18)
    with no_grad():
        _, trace = tiny_model.forward(tokens, return_trace=True)

    ## a trailing partial chunk is never indexed
    assert trace.store.num_chunks == 4
    assert trace.mid_hidden.shape == (18, 16)
    ## the upper decoder reads the store without changing it
    assert trace.store_hash_before == trace.store_hash_after

    assert set(trace.selections) == {2}
    selection = trace.selections[2]
    own_chunk = np.arange(18) // 4
    assert (np.where(selection.valid, selection.indices, -1) < own_chunk[:, None]).all()
    npt.assert_array_equal(selection.counts, np.minimum(own_chunk, 2))


def test_retrieval_reaches_past_the_window(tiny_model, rng):
    """A token far beyond the window still depends on early chunks through HSA."""
    tokens = random_tokens(rng, 24)
    wide = tiny_model.with_runtime(top_k=6)
    with no_grad():
        before = wide.forward(tokens).data
        changed = tokens.copy()
        changed[1] = (changed[1] + 1) % 264
        after = wide.forward(changed).data
    ## position 23 is 22 tokens past position 1, beyond the 6-token window
    assert np.abs(after[23] - before[23]).max() > 1e-14

    ## without the HSA branch the same edit cannot reach it
    no_hsa = HSAModel(wide.config, wide.params.copy())
    no_hsa.params["layer.2.hsa.o_proj"].data[:] = 0.0
    with no_grad():
        npt.assert_allclose(no_hsa.forward(changed).data[23], no_hsa.forward(tokens).data[23], atol=1e-12)


def test_grouped_heads(grouped_config, float64, rng):  # pylint: disable=unused-argument
    model = HSAModel(grouped_config, seed=1)
    with no_grad():
        logits, trace = model.forward(random_tokens(rng, 17), return_trace=True)
    assert logits.shape == (17, 264)
    assert set(trace.selections) == {2, 3}
    assert trace.store.keys.shape == (4, 4, 2, 8)


def test_runtime_knobs_share_weights(tiny_model):
    view = tiny_model.with_runtime(swa_window=32, top_k=1)
    assert view.params is tiny_model.params
    assert view.config.swa_window == 32
    assert view.config.architecture_hash() == tiny_model.config.architecture_hash()


## adds the same amount to every retrieval score of a token, which the fusion softmax cancels
SHIFT_INVARIANT = "encoder.landmark_proj.bias"


@pytest.mark.slow
@pytest.mark.timeout(600)
def test_model_gradients(tiny_config, float64, rng):  # pylint: disable=unused-argument
    """Backward through the full model agrees with finite differences, for every parameter."""
    ## two lower and two upper layers, 96 tokens in 16-token chunks, two chunks retrieved;
    ## larger weights keep every gradient well above rounding noise
    config = dataclasses.replace(tiny_config, chunk_size=16, swa_window=16, init_std=0.3)
    model = HSAModel(config, seed=4)
    tokens = random_tokens(rng, 96)
    mask = np.ones(96, dtype=bool)
    inputs = {name: param for name, param in model.params.items() if name != SHIFT_INVARIANT}
    assert len(inputs) == len(model.params) - 1

    result = check_gradients(lambda: model.loss(tokens, mask), inputs, step=1e-6, max_elements=3, seed=2)
    assert result.passed(1e-4, mode="group"), result.group_errors


@pytest.mark.slow
def test_every_parameter_learns(float64, rng):  # pylint: disable=unused-argument
    config = ModelConfig(
        d_model=16,
        n_layers=4,
        n_heads=2,
        chunk_size=32,
        top_k=2,
        swa_window=16,
        vocab_size=17,
        encoder_depth=1,
        ffn_width=32,
    )
    model = HSAModel(config, seed=5)
    tokens = random_tokens(rng, 130, vocab=17)
    model.loss(tokens, np.ones(130, dtype=bool)).backward()

    largest = {
        name: 0.0 if param.grad is None else np.abs(param.grad).max() for name, param in model.params.items()
    }
    assert all(value > 0 for name, value in largest.items() if name != SHIFT_INVARIANT), largest
    ## the retrieval path learns even though only 2 of up to 4 visible chunks are fused
    assert largest["layer.2.hsa.q_slc_proj"] > 0
    assert largest["encoder.landmark_proj.weight"] > 0
    assert largest[SHIFT_INVARIANT] < 1e-10 * max(largest.values())


def test_invalid_tokens(tiny_model):
    with pytest.raises(ValueError, match="empty"):
        tiny_model.forward([])
    with pytest.raises(ValueError, match="within"):
        tiny_model.forward([1, 264])
    with pytest.raises(ValueError, match="within"):
        tiny_model.forward([-1])
    with pytest.raises(ValueError, match="1-d"):
        validate_tokens(np.zeros((2, 2), dtype=int), 264)
    with pytest.raises(ValueError, match="integer"):
        validate_tokens([1.5, 2.0], 264)


def test_loss_is_masked(tiny_model, rng):
    tokens = random_tokens(rng, 10)
    mask = np.zeros(10, dtype=bool)
    mask[6:] = True
    with no_grad():
        logits = tiny_model.forward(tokens).data
        loss = tiny_model.loss(tokens, mask).item()
    peak = logits.max(axis=-1, keepdims=True)
    log_probs = logits - peak - np.log(np.exp(logits - peak).sum(axis=-1, keepdims=True))
    expected = -np.mean([log_probs[i, tokens[i + 1]] for i in range(5, 9)])
    npt.assert_allclose(loss, expected, rtol=1e-9)

    with pytest.raises(ValueError, match="no positions"):
        tiny_model.loss(tokens, np.zeros(10, dtype=bool))

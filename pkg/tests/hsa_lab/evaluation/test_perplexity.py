"""Tests of last-n perplexity"""

import pytest

from hsa_lab.datagen.corpus import lm_document
from hsa_lab.evaluation.perplexity import eval_ppl

# pylint: disable=missing-function-docstring


def test_uniform_model(tiny_model, rng):
    """A model with a zero output head is uniform over the vocabulary."""
    tiny_model.params["lm_head.weight"].data[...] = 0.0
    tiny_model.params["lm_head.bias"].data[...] = 0.0
    tokens = lm_document(80, rng).tokens
    assert eval_ppl(tiny_model, tokens, last_n=16) == pytest.approx(264.0)


def test_streamed_matches_one_pass(tiny_model, rng):
    tokens = lm_document(90, rng).tokens
    one_pass = eval_ppl(tiny_model, tokens, last_n=32)
    assert 1.0 < one_pass
    assert eval_ppl(tiny_model, tokens, last_n=32, incremental=True) == pytest.approx(one_pass, rel=1e-9)
    assert eval_ppl(tiny_model, tokens, last_n=32, incremental=True, segment_length=7) == pytest.approx(
        one_pass, rel=1e-9
    )


def test_invalid(tiny_model, rng):
    tokens = lm_document(20, rng).tokens
    with pytest.raises(ValueError, match="last_n should be positive"):
        eval_ppl(tiny_model, tokens, last_n=0)
    with pytest.raises(ValueError, match="too short"):
        eval_ppl(tiny_model, tokens, last_n=21)
    with pytest.raises(ValueError, match="too short"):
        eval_ppl(tiny_model, tokens[:1], last_n=1)


def test_whole_stream(tiny_model, rng):
    """Asking for every token scores all but the first, which has no context."""
    tokens = lm_document(20, rng).tokens
    assert eval_ppl(tiny_model, tokens, last_n=20) == pytest.approx(eval_ppl(tiny_model, tokens, last_n=19))

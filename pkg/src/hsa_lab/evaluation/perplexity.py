"""Perplexity of the last tokens of a stream, in one pass or streamed chunk by chunk."""

from __future__ import annotations

import numpy as np

from hsa_lab.model.decoder import HSAModel
from hsa_lab.model.incremental import IncrementalDecoder
from hsa_lab.numerics.tensor import no_grad


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def eval_ppl(
    model: HSAModel,
    tokens,
    last_n: int,
    incremental: bool = False,
    segment_length: int | None = None,
) -> float:
    """``exp`` of the mean negative log-likelihood of the final ``last_n`` tokens.

    Every scored token is conditioned on the full preceding stream. The first token
    has no context, so a stream of exactly ``last_n`` tokens scores its last
    ``last_n - 1``.

    Args:
        model: the model
        tokens: (n,) token stream with n >= last_n
        last_n (int): number of final tokens scored
        incremental (bool): stream the input through :class:`IncrementalDecoder`
            in segments instead of one forward pass
        segment_length (int): tokens per streamed segment (default: 4 chunks)
    Raises:
        ValueError: if the stream is shorter than ``last_n`` or than 2 tokens
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if last_n < 1:
        raise ValueError("last_n should be positive")
    if len(tokens) < max(last_n, 2):
        raise ValueError(f"stream of {len(tokens)} tokens is too short to score the last {last_n}")
    scored = min(last_n, len(tokens) - 1)

    inputs = tokens[:-1]
    if incremental:
        segment_length = segment_length or 4 * model.config.chunk_size
        decoder = IncrementalDecoder(model)
        starts = range(0, len(inputs), segment_length)
        pieces = [decoder.feed(inputs[start : start + segment_length]) for start in starts]
        logits = np.concatenate(pieces, axis=0)
    else:
        with no_grad():
            logits = model.forward(inputs).data

    log_probs = _log_softmax(logits[-scored:])
    targets = tokens[-scored:]
    nll = -log_probs[np.arange(scored), targets]
    return float(np.exp(nll.mean()))

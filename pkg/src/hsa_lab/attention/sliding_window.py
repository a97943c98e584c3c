"""Causal sliding-window attention with rotary positions."""

from __future__ import annotations

import numpy as np

from hsa_lab.attention.rope import RopeTable
from hsa_lab.numerics import functional as F
from hsa_lab.numerics.tensor import ShapeError, Tensor, as_tensor

DEFAULT_BLOCK_SIZE = 256


def _check_heads(q: Tensor, k: Tensor, v: Tensor):
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ShapeError(f"attention expects (tokens, heads, head_dim), got {q.shape}, {k.shape}, {v.shape}")
    if k.shape != v.shape:
        raise ShapeError(f"keys {k.shape} and values {v.shape} differ")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query head_dim {q.shape[-1]} and key head_dim {k.shape[-1]} differ")
    if q.shape[1] % k.shape[1]:
        raise ShapeError(f"query heads {q.shape[1]} are not a multiple of key/value heads {k.shape[1]}")


def windowed_attention(
    q,
    k,
    v,
    window: int | None,
    q_offset: int = 0,
    k_offset: int = 0,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> Tensor:
    """Causal attention where a query at absolute position p sees keys at ``p-W+1 .. p``.

    Queries are processed in blocks, each against only the key span it can reach,
    so memory is bounded by ``block_size * (block_size + window)`` scores per head.

    Args:
        q: (n_q, h, d_h) queries
        k: (n_k, h_kv, d_h) keys; ``h`` must be a multiple of ``h_kv`` (grouped heads)
        v: (n_k, h_kv, d_h) values
        window (int): window length W >= 1, or None for full causal attention
        q_offset (int): absolute position of ``q[0]``
        k_offset (int): absolute position of ``k[0]``
        block_size (int): queries per block
    Returns:
        (n_q, h, d_h) outputs. Queries with no visible key get zeros.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    _check_heads(q, k, v)
    if window is not None and window < 1:
        raise ValueError("window should be at least 1")
    n_q, n_heads, head_dim = q.shape
    n_k, n_kv_heads, _ = k.shape
    group = n_heads // n_kv_heads
    scale = 1.0 / np.sqrt(head_dim)
    span = np.iinfo(np.int64).max if window is None else window
    block_size = max(1, min(block_size, span, max(n_q, 1)))

    grouped_q = F.reshape(q, (n_q, n_kv_heads, group, head_dim))
    outputs = []
    for start in range(0, n_q, block_size):
        stop = min(start + block_size, n_q)
        first_pos = q_offset + start
        last_pos = q_offset + stop - 1
        key_lo = max(0, first_pos - span + 1 - k_offset)
        key_hi = min(n_k, last_pos + 1 - k_offset)
        if key_hi <= key_lo:
            outputs.append(Tensor(np.zeros((stop - start, n_heads, head_dim), dtype=q.dtype)))
            continue
        q_pos = np.arange(first_pos, last_pos + 1)[:, None]
        k_pos = np.arange(key_lo + k_offset, key_hi + k_offset)[None, :]
        allowed = (k_pos <= q_pos) & (k_pos > q_pos - span)

        q_block = grouped_q[start:stop]
        k_block = k[key_lo:key_hi]
        v_block = v[key_lo:key_hi]
        scores = F.einsum("qhgd,khd->hgqk", q_block, k_block) * scale
        probs = F.softmax(scores, axis=-1, mask=allowed[None, None, :, :])
        block_out = F.einsum("hgqk,khd->qhgd", probs, v_block)
        outputs.append(F.reshape(block_out, (stop - start, n_heads, head_dim)))

    if len(outputs) == 1:
        return outputs[0]
    return F.concatenate(outputs, axis=0)


def swa_attend(
    q,
    k,
    v,
    window: int,
    rope: RopeTable | None,
    offset: int = 0,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> Tensor:
    """Sliding-window attention with RoPE applied to q and k before scoring.

    Args:
        q: (n, h, d_h) queries
        k: (n, h_kv, d_h) keys
        v: (n, h_kv, d_h) values
        window (int): W, the number of most recent positions (self included) visible
        rope (RopeTable): rotary table, or None to skip positional rotation
        offset (int): absolute position of the first token
    """
    q, k = as_tensor(q), as_tensor(k)
    if rope is not None:
        positions = np.arange(offset, offset + q.shape[0])
        q = rope.apply(q, positions)
        k = rope.apply(k, np.arange(offset, offset + k.shape[0]))
    return windowed_attention(q, k, v, window, q_offset=offset, k_offset=offset, block_size=block_size)


def full_causal_attention(q, k, v) -> np.ndarray:
    """Dense causal attention in plain numpy; oracle for the windowed path."""
    q, k, v = (np.asarray(t.data if isinstance(t, Tensor) else t, dtype=np.float64) for t in (q, k, v))
    n, n_heads, head_dim = q.shape
    group = n_heads // k.shape[1]
    k = np.repeat(k, group, axis=1)
    v = np.repeat(v, group, axis=1)
    scores = np.einsum("qhd,khd->hqk", q, k) / np.sqrt(head_dim)
    causal = np.tril(np.ones((n, n), dtype=bool))
    scores = np.where(causal[None], scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    return np.einsum("hqk,khd->qhd", probs, v)

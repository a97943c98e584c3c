"""Hierarchical sparse attention: landmark scoring, top-K chunk selection,
per-chunk attention and score-weighted fusion.

No positional encoding is applied anywhere on this path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hsa_lab.attention.chunk_store import ChunkStore
from hsa_lab.numerics import functional as F
from hsa_lab.numerics.tensor import ShapeError, Tensor, as_tensor

DEFAULT_BLOCK_SIZE = 128


def score_sentinel(dtype) -> float:
    """Stand-in for minus infinity: the most negative finite value of ``dtype``."""
    return float(np.finfo(dtype).min)


@dataclass(frozen=True)
class RetrievalSelection:
    """Per-token selected chunks, their raw scores and fusion weights.

    Rows are padded to a common width ``min(K, C)``; padded slots carry index -1,
    the sentinel score and weight 0.
    """

    indices: np.ndarray
    """(n, K') selected chunk ids, -1 for padding"""
    raw_scores: Tensor
    """(n, K') retrieval scores of the selected chunks"""
    weights: Tensor
    """(n, K') fusion weights, softmax over the valid slots of each row"""

    @property
    def valid(self) -> np.ndarray:
        return self.indices >= 0

    @property
    def counts(self) -> np.ndarray:
        """|I_t| per token."""
        return self.valid.sum(axis=-1)

    @property
    def width(self) -> int:
        return self.indices.shape[-1]

    def entropy(self) -> np.ndarray:
        """Shannon entropy (nats) of each token's fusion weights; 0 for empty selections."""
        weights = np.asarray(self.weights.data, dtype=np.float64)
        logs = np.log(np.where(weights > 0, weights, 1.0))
        return -np.sum(weights * logs, axis=-1)

    def chunk_distance(self, positions, chunk_size: int) -> np.ndarray:
        """Mean distance (in chunks) between each token's own chunk and its selected chunks.

        NaN for tokens without a selection.
        """
        own = (np.asarray(positions) // chunk_size)[:, None]
        distance = np.where(self.valid, own - self.indices, 0).astype(np.float64)
        counts = self.counts
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(counts > 0, distance.sum(axis=-1) / counts, np.nan)


def eligible_chunks(positions, chunk_size: int, num_chunks: int) -> np.ndarray:
    """(n, C) booleans: chunk i is visible to token t iff i < floor(t / S)."""
    positions = np.atleast_1d(np.asarray(positions, dtype=np.int64))
    return np.arange(num_chunks)[None, :] < (positions // chunk_size)[:, None]


def score_chunks(q_slc, landmarks, positions, chunk_size: int) -> Tensor:
    """Retrieval scores ``q_slc . landmark_i / sqrt(d_r)`` for eligible chunks.

    Ineligible chunks get :func:`score_sentinel`.

    Args:
        q_slc: (n, d_r) retrieval queries, one per token
        landmarks: (C, d_r) chunk landmarks
        positions: (n,) absolute token positions (or a single int)
        chunk_size (int): S
    Returns:
        (n, C) scores
    """
    q_slc = as_tensor(q_slc)
    landmarks = as_tensor(landmarks, dtype=q_slc.dtype)
    if q_slc.ndim == 1:
        q_slc = F.reshape(q_slc, (1, q_slc.shape[0]))
    if landmarks.ndim != 2 or q_slc.shape[-1] != landmarks.shape[-1]:
        raise ShapeError(f"retrieval queries {q_slc.shape} and landmarks {landmarks.shape} disagree")
    positions = np.broadcast_to(np.atleast_1d(np.asarray(positions, dtype=np.int64)), (q_slc.shape[0],))
    scale = 1.0 / np.sqrt(landmarks.shape[-1])
    scores = F.einsum("nd,cd->nc", q_slc, landmarks) * scale
    eligible = eligible_chunks(positions, chunk_size, landmarks.shape[0])
    return F.masked_fill(scores, ~eligible, score_sentinel(scores.dtype))


def select_topk(scores, top_k: int) -> np.ndarray:
    """Indices of the ``top_k`` highest eligible scores per row.

    Ties go to the lower chunk index. Rows are padded with -1 up to width
    ``min(top_k, C)`` when fewer chunks are eligible.

    >>> select_topk(np.array([[2.0, 1.0, 0.5, 0.7]]), 2).tolist()
    [[0, 1]]
    """
    if top_k < 1:
        raise ValueError("top_k should be at least 1")
    data = np.asarray(scores.data if isinstance(scores, Tensor) else scores)
    if data.ndim == 1:
        data = data[None, :]
    width = min(top_k, data.shape[-1])
    order = np.argsort(-data, axis=-1, kind="stable")[:, :width]
    picked = np.take_along_axis(data, order, axis=-1)
    order = np.where(picked <= score_sentinel(data.dtype), -1, order)
    return order.astype(np.int64)


def fusion_weights(selected_scores, valid) -> Tensor:
    """Softmax over the selected chunks only; rows with nothing selected get zeros."""
    selected_scores = as_tensor(selected_scores)
    valid = np.asarray(valid, dtype=bool)
    if selected_scores.shape[-1] == 0:
        return Tensor(np.zeros(selected_scores.shape), dtype=selected_scores.dtype)
    return F.softmax(selected_scores, axis=-1, mask=valid)


def select_chunks(q_slc, landmarks, positions, chunk_size: int, top_k: int) -> RetrievalSelection:
    """Score, select and weight chunks for every token in one call."""
    scores = score_chunks(q_slc, landmarks, positions, chunk_size)
    indices = select_topk(scores, top_k)
    valid = indices >= 0
    safe = np.where(valid, indices, 0)
    if indices.shape[-1] == 0:
        selected = Tensor(np.zeros(indices.shape), dtype=scores.dtype)
    else:
        selected = F.gather(scores, safe, axis=-1)
    return RetrievalSelection(indices=indices, raw_scores=selected, weights=fusion_weights(selected, valid))


def hsa_attend(
    q_attn,
    store: ChunkStore,
    selection: RetrievalSelection,
    q_norm_gain=None,
    k_norm_gain=None,
    eps: float = 1e-6,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> Tensor:
    """Intra-chunk attention over each selected chunk, fused by the selection weights.

    For token t and selected chunk i the chunk output is
    ``softmax(norm(q_t) . norm(K_[i])^T / sqrt(d_h)) V_[i]`` computed over chunk i alone;
    the token output is the weighted sum of its chunk outputs. Tokens without a
    selection get a zero vector.

    Args:
        q_attn: (n, h, d_h) attention queries
        store (ChunkStore): shared chunk memory
        selection (RetrievalSelection): output of :func:`select_chunks`
        q_norm_gain: (d_h,) gain of the query RMS norm
        k_norm_gain: (d_h,) gain of the key RMS norm
        eps (float): RMS norm epsilon
        block_size (int): tokens processed together
    """
    q_attn = as_tensor(q_attn)
    n_tokens, n_heads, head_dim = q_attn.shape
    if selection.indices.shape[0] != n_tokens:
        raise ShapeError(f"selection covers {selection.indices.shape[0]} tokens, queries {n_tokens}")
    if selection.indices.size and selection.indices.max() >= store.num_chunks:
        raise ValueError("selection refers to chunks missing from the store")
    if store.num_chunks == 0 or not selection.valid.any():
        return Tensor(np.zeros(q_attn.shape), dtype=q_attn.dtype)
    if head_dim != store.head_dim or n_heads % store.n_kv_heads:
        raise ShapeError(f"queries {q_attn.shape} do not match chunk keys {store.keys.shape}")

    n_kv_heads = store.n_kv_heads
    group = n_heads // n_kv_heads
    scale = 1.0 / np.sqrt(head_dim)
    queries = F.rms_normalize(q_attn, q_norm_gain, eps=eps)
    queries = F.reshape(queries, (n_tokens, n_kv_heads, group, head_dim))
    keys = F.rms_normalize(store.keys, k_norm_gain, eps=eps)
    valid = selection.valid
    safe = np.where(valid, selection.indices, 0)

    outputs = []
    for start in range(0, n_tokens, block_size):
        stop = min(start + block_size, n_tokens)
        if not valid[start:stop].any():
            outputs.append(Tensor(np.zeros((stop - start, n_heads, head_dim)), dtype=q_attn.dtype))
            continue
        chunk_keys = F.take(keys, safe[start:stop], axis=0)
        chunk_values = F.take(store.values, safe[start:stop], axis=0)
        scores = F.einsum("bhgd,bkshd->bkhgs", queries[start:stop], chunk_keys) * scale
        probs = F.softmax(scores, axis=-1)
        chunk_out = F.einsum("bkhgs,bkshd->bkhgd", probs, chunk_values)
        fused = F.einsum("bk,bkhgd->bhgd", selection.weights[start:stop], chunk_out)
        outputs.append(F.reshape(fused, (stop - start, n_heads, head_dim)))

    if len(outputs) == 1:
        return outputs[0]
    return F.concatenate(outputs, axis=0)


def hsa_reference(
    q_attn,
    store: ChunkStore,
    selection: RetrievalSelection,
    q_norm_gain=None,
    k_norm_gain=None,
    eps: float = 1e-6,
) -> np.ndarray:
    """Token-by-token, chunk-by-chunk evaluation of the same computation as :func:`hsa_attend`.

    Computed in float64 and cast back to the query dtype. Fusion weights are
    recomputed from ``selection.raw_scores``.
    """
    out_dtype = q_attn.dtype
    q = np.asarray(q_attn.data if isinstance(q_attn, Tensor) else q_attn, dtype=np.float64)
    keys = np.asarray(store.keys.data, dtype=np.float64)
    values = np.asarray(store.values.data, dtype=np.float64)
    raw = np.asarray(selection.raw_scores.data, dtype=np.float64)
    n_tokens, n_heads, head_dim = q.shape
    group = n_heads // max(store.n_kv_heads, 1)
    q_gain = np.ones(head_dim) if q_norm_gain is None else np.asarray(_data(q_norm_gain), dtype=np.float64)
    k_gain = np.ones(head_dim) if k_norm_gain is None else np.asarray(_data(k_norm_gain), dtype=np.float64)

    def norm(vector):
        return vector / np.sqrt(np.mean(vector * vector, axis=-1, keepdims=True) + eps)

    output = np.zeros((n_tokens, n_heads, head_dim))
    for t in range(n_tokens):
        slots = [j for j in range(selection.width) if selection.indices[t, j] >= 0]
        if not slots:
            continue
        top = max(raw[t, j] for j in slots)
        exps = {j: np.exp(raw[t, j] - top) for j in slots}
        total = sum(exps.values())
        for j in slots:
            chunk = selection.indices[t, j]
            weight = exps[j] / total
            for head in range(n_heads):
                kv_head = head // group
                query = norm(q[t, head]) * q_gain
                chunk_keys = norm(keys[chunk, :, kv_head, :]) * k_gain
                scores = chunk_keys @ query / np.sqrt(head_dim)
                scores = np.exp(scores - scores.max())
                probs = scores / scores.sum()
                output[t, head] += weight * (probs @ values[chunk, :, kv_head, :])
    return output.astype(out_dtype)


def _data(value):
    return value.data if isinstance(value, Tensor) else value

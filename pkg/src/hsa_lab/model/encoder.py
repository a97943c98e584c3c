"""Bidirectional [CLS] chunk encoder producing the shared HSA memory."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hsa_lab.attention.chunk_store import ChunkStore
from hsa_lab.model.config import ModelConfig
from hsa_lab.model.layers import feed_forward, merge_heads, project_heads
from hsa_lab.model.params import ModelParams
from hsa_lab.numerics import functional as F
from hsa_lab.numerics.tensor import Tensor


@dataclass(frozen=True)
class ChunkEncoderOutput:
    """Encoder outputs for C complete chunks."""

    token_states: Tensor
    """E_[i]: per-token encoder outputs, (C, S, d)"""
    landmarks: Tensor
    """landmark per chunk from the [CLS] output, (C, d_r)"""

    @property
    def num_chunks(self) -> int:
        return self.landmarks.shape[0]


def _bidirectional_block(x: Tensor, params: ModelParams, prefix: str, config: ModelConfig) -> Tensor:
    """Full (unmasked) attention within each chunk, then a feed-forward; both residual."""
    heads, head_dim = config.n_heads, config.head_dim
    normed = F.rms_normalize(x, params[f"{prefix}.attn_norm.gain"], eps=config.norm_eps)
    q = project_heads(normed, params[f"{prefix}.attn.q_proj"], heads, head_dim)
    k = project_heads(normed, params[f"{prefix}.attn.k_proj"], heads, head_dim)
    v = project_heads(normed, params[f"{prefix}.attn.v_proj"], heads, head_dim)
    scores = F.einsum("cqhd,ckhd->chqk", q, k) * (1.0 / np.sqrt(head_dim))
    probs = F.softmax(scores, axis=-1)
    attended = F.einsum("chqk,ckhd->cqhd", probs, v)
    x = x + F.linear(merge_heads(attended), params[f"{prefix}.attn.o_proj"])
    return x + feed_forward(x, params, prefix, config.norm_eps)


def run_chunk_encoder(mid_hidden: Tensor, config: ModelConfig, params: ModelParams) -> ChunkEncoderOutput:
    """Encode every complete chunk of ``mid_hidden`` (n, d) independently.

    Each chunk gets a [CLS] token prepended and learned intra-chunk position
    embeddings (positions 0..S); nothing depends on where the chunk sits in the
    sequence.
    """
    size = config.chunk_size
    n_chunks = mid_hidden.shape[0] // size
    d = config.d_model
    if n_chunks == 0:
        empty = params["encoder.cls"].dtype
        return ChunkEncoderOutput(
            token_states=Tensor(np.zeros((0, size, d)), dtype=empty),
            landmarks=Tensor(np.zeros((0, config.retrieval_dim)), dtype=empty),
        )
    chunks = F.reshape(mid_hidden[: n_chunks * size], (n_chunks, size, d))
    cls = F.broadcast_to(F.reshape(params["encoder.cls"], (1, 1, d)), (n_chunks, 1, d))
    x = F.concatenate([cls, chunks], axis=1) + params["encoder.pos_embed"]
    for block in range(config.encoder_depth):
        x = _bidirectional_block(x, params, f"encoder.block.{block}", config)
    x = F.rms_normalize(x, params["encoder.out_norm.gain"], eps=config.norm_eps)
    landmarks = F.linear(
        x[:, 0, :], params["encoder.landmark_proj.weight"], params["encoder.landmark_proj.bias"]
    )
    return ChunkEncoderOutput(token_states=x[:, 1:, :], landmarks=landmarks)


def encode_chunks(mid_hidden: Tensor, config: ModelConfig, params: ModelParams) -> ChunkStore:
    """Build the ChunkStore read by every HSA layer from the mid-layer hidden states."""
    encoded = run_chunk_encoder(mid_hidden, config, params)
    if encoded.num_chunks == 0:
        return ChunkStore.empty(
            config.chunk_size,
            config.n_kv_heads,
            config.head_dim,
            config.retrieval_dim,
            dtype=params["encoder.cls"].dtype,
        )
    keys = project_heads(encoded.token_states, params["encoder.k_proj"], config.n_kv_heads, config.head_dim)
    values = project_heads(encoded.token_states, params["encoder.v_proj"], config.n_kv_heads, config.head_dim)
    return ChunkStore(chunk_size=config.chunk_size, keys=keys, values=values, landmarks=encoded.landmarks)

"""The hybrid decoder: SWA-only lower layers, shared chunk memory, SWA+HSA upper layers."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from hsa_lab.attention.chunk_store import ChunkStore
from hsa_lab.attention.hsa import RetrievalSelection, hsa_attend, select_chunks
from hsa_lab.attention.rope import RopeTable
from hsa_lab.attention.sliding_window import windowed_attention
from hsa_lab.model.config import ModelConfig
from hsa_lab.model.encoder import encode_chunks
from hsa_lab.model.layers import feed_forward, merge_heads, project_heads
from hsa_lab.model.params import ModelParams, init_params
from hsa_lab.numerics import functional as F
from hsa_lab.numerics.tensor import Tensor


@functools.lru_cache(maxsize=8)
def rope_table(head_dim: int, base: float) -> RopeTable:
    return RopeTable(head_dim, base=base)


@dataclass
class LayerCache:
    """Rotated keys and values of the most recent tokens of one layer."""

    keys: Tensor
    values: Tensor

    def __len__(self):
        return self.keys.shape[0]


@dataclass
class ForwardTrace:
    """Intermediate results of a forward pass, for inspection and tests."""

    store: ChunkStore
    """the chunk memory shared by all HSA layers"""
    mid_hidden: Tensor
    """hidden states after the lower decoder"""
    selections: dict[int, RetrievalSelection] = field(default_factory=dict)
    """retrieval selection per HSA layer"""
    store_hash_before: str = ""
    """store content hash before the upper decoder ran"""
    store_hash_after: str = ""
    """store content hash after the upper decoder ran"""


def validate_tokens(tokens, vocab_size: int) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim != 1:
        raise ValueError(f"tokens should be a 1-d sequence, got shape {tokens.shape}")
    if tokens.size == 0:
        raise ValueError("cannot run the model on an empty sequence")
    if not np.issubdtype(tokens.dtype, np.integer):
        raise ValueError("tokens should be integer ids")
    if tokens.min() < 0 or tokens.max() >= vocab_size:
        raise ValueError(f"token ids should be within [0, {vocab_size})")
    return tokens.astype(np.int64)


def swa_branch(
    normed: Tensor,
    layer: int,
    params: ModelParams,
    config: ModelConfig,
    offset: int = 0,
    cache: LayerCache | None = None,
) -> tuple[Tensor, LayerCache]:
    """Sliding-window attention of one layer over ``normed`` (n, d).

    Returns the branch output and the rotated keys/values of these tokens, so the
    caller can extend a streaming cache.
    """
    prefix = f"layer.{layer}.swa"
    q = project_heads(normed, params[f"{prefix}.q_proj"], config.n_heads, config.head_dim)
    k = project_heads(normed, params[f"{prefix}.k_proj"], config.n_kv_heads, config.head_dim)
    v = project_heads(normed, params[f"{prefix}.v_proj"], config.n_kv_heads, config.head_dim)
    if config.swa_positional == "rope":
        rope = rope_table(config.head_dim, config.rope_base)
        positions = np.arange(offset, offset + normed.shape[0])
        q = rope.apply(q, positions)
        k = rope.apply(k, positions)
    current = LayerCache(keys=k, values=v)
    keys, values, k_offset = k, v, offset
    if cache is not None and len(cache):
        keys = F.concatenate([cache.keys, k], axis=0)
        values = F.concatenate([cache.values, v], axis=0)
        k_offset = offset - len(cache)
    attended = windowed_attention(
        q,
        keys,
        values,
        config.swa_window,
        q_offset=offset,
        k_offset=k_offset,
        block_size=config.swa_block_size,
    )
    return F.linear(merge_heads(attended), params[f"{prefix}.o_proj"]), current


def hsa_branch(
    normed: Tensor,
    layer: int,
    params: ModelParams,
    config: ModelConfig,
    store: ChunkStore,
    offset: int = 0,
) -> tuple[Tensor, RetrievalSelection]:
    """Retrieve top-K chunks from the shared store and fuse their per-chunk attention."""
    prefix = f"layer.{layer}.hsa"
    positions = np.arange(offset, offset + normed.shape[0])
    q_slc = F.linear(normed, params[f"{prefix}.q_slc_proj"])
    selection = select_chunks(q_slc, store.landmarks, positions, config.chunk_size, config.top_k)
    q_attn = project_heads(normed, params[f"{prefix}.q_attn_proj"], config.n_heads, config.head_dim)
    attended = hsa_attend(
        q_attn,
        store,
        selection,
        q_norm_gain=params[f"{prefix}.q_norm.gain"],
        k_norm_gain=params[f"{prefix}.k_norm.gain"],
        eps=config.norm_eps,
        block_size=config.hsa_block_size,
    )
    return F.linear(merge_heads(attended), params[f"{prefix}.o_proj"]), selection


def decoder_layer(
    x: Tensor,
    layer: int,
    params: ModelParams,
    config: ModelConfig,
    offset: int = 0,
    store: ChunkStore | None = None,
    cache: LayerCache | None = None,
) -> tuple[Tensor, LayerCache, RetrievalSelection | None]:
    """One pre-norm block. HSA layers add the SWA and HSA branches in parallel."""
    normed = F.rms_normalize(x, params[f"layer.{layer}.attn_norm.gain"], eps=config.norm_eps)
    attn_out, current = swa_branch(normed, layer, params, config, offset=offset, cache=cache)
    selection = None
    if config.is_hsa_layer(layer):
        if store is None:
            raise ValueError(f"layer {layer} carries HSA but no chunk store was provided")
        hsa_out, selection = hsa_branch(normed, layer, params, config, store, offset=offset)
        attn_out = attn_out + hsa_out
    x = x + attn_out
    x = x + feed_forward(x, params, f"layer.{layer}", config.norm_eps)
    return x, current, selection


def output_logits(x: Tensor, params: ModelParams, config: ModelConfig) -> Tensor:
    normed = F.rms_normalize(x, params["final_norm.gain"], eps=config.norm_eps)
    return F.linear(normed, params["lm_head.weight"], params["lm_head.bias"])


def forward(tokens, config: ModelConfig, params: ModelParams, return_trace: bool = False):
    """Logits (n, V) for every position of a token sequence.

    Args:
        tokens: (n,) integer ids, n >= 1
        config (ModelConfig): architecture and runtime knobs
        params (ModelParams): weights
        return_trace (bool): also return a :class:`ForwardTrace`
    Raises:
        ValueError: for an empty sequence or out-of-vocabulary ids
    """
    tokens = validate_tokens(tokens, config.vocab_size)
    x = F.embedding(params["embed.weight"], tokens)
    for layer in config.lower_layers:
        x, _, _ = decoder_layer(x, layer, params, config)
    mid_hidden = x
    store = encode_chunks(mid_hidden, config, params)
    trace = ForwardTrace(store=store, mid_hidden=mid_hidden)
    if return_trace:
        trace.store_hash_before = store.content_hash()
    for layer in config.upper_layers:
        x, _, selection = decoder_layer(x, layer, params, config, store=store)
        if selection is not None:
            trace.selections[layer] = selection
    logits = output_logits(x, params, config)
    if return_trace:
        trace.store_hash_after = store.content_hash()
        return logits, trace
    return logits


def sequence_loss(logits: Tensor, tokens, loss_mask) -> Tensor:
    """Next-token cross-entropy: position i predicts token i+1 where ``loss_mask[i+1]``."""
    tokens = np.asarray(tokens, dtype=np.int64)
    loss_mask = np.asarray(loss_mask, dtype=bool)
    return F.cross_entropy(logits[:-1], tokens[1:], loss_mask[1:])


class HSAModel:
    """Configuration plus weights, with the forward pass and runtime-knob helpers."""

    def __init__(self, config: ModelConfig, params: ModelParams | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    def __repr__(self):
        return (
            f"HSAModel(d_model={self.config.d_model}, n_layers={self.config.n_layers}, "
            f"parameters={self.num_parameters})"
        )

    @property
    def num_parameters(self) -> int:
        return self.params.num_parameters

    def forward(self, tokens, return_trace: bool = False):
        return forward(tokens, self.config, self.params, return_trace=return_trace)

    __call__ = forward

    def loss(self, tokens, loss_mask) -> Tensor:
        """Masked next-token cross-entropy of one sequence."""
        return sequence_loss(self.forward(tokens), tokens, loss_mask)

    def with_runtime(self, swa_window: int | None = None, top_k: int | None = None) -> HSAModel:
        """A view sharing these weights with a different window and/or top-k."""
        return HSAModel(self.config.with_runtime(swa_window=swa_window, top_k=top_k), self.params)

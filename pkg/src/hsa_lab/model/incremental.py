"""Streaming inference: process a sequence in segments of any size with cached state."""

from __future__ import annotations

import numpy as np

from hsa_lab.attention.chunk_store import ChunkStore
from hsa_lab.model.decoder import HSAModel, LayerCache, decoder_layer, output_logits, validate_tokens
from hsa_lab.model.encoder import encode_chunks
from hsa_lab.numerics import functional as F
from hsa_lab.numerics.tensor import Tensor, no_grad


class IncrementalDecoder:
    """Feed tokens segment by segment and get the same logits as one full forward pass.

    State kept between segments:

    - per layer, the rotated keys and values of the last ``W - 1`` tokens
    - the mid-layer hidden states of the current, still incomplete chunk
    - the shared chunk store, extended as soon as a chunk completes
    """

    def __init__(self, model: HSAModel):
        self.model = model
        self.config = model.config
        self.position = 0
        self.caches: dict[int, LayerCache] = {}
        self.pending_mid: Tensor | None = None
        self.store = ChunkStore.empty(
            self.config.chunk_size,
            self.config.n_kv_heads,
            self.config.head_dim,
            self.config.retrieval_dim,
            dtype=model.params.dtype,
        )

    def feed(self, tokens) -> np.ndarray:
        """Process the next tokens of the stream and return their logits (n, V)."""
        tokens = validate_tokens(tokens, self.config.vocab_size)
        config, params = self.config, self.model.params
        offset = self.position
        with no_grad():
            x = F.embedding(params["embed.weight"], tokens)
            for layer in config.lower_layers:
                x, current, _ = decoder_layer(
                    x, layer, params, config, offset=offset, cache=self.caches.get(layer)
                )
                self._update_cache(layer, current)
            self._grow_store(x)
            for layer in config.upper_layers:
                x, current, _ = decoder_layer(
                    x,
                    layer,
                    params,
                    config,
                    offset=offset,
                    store=self.store,
                    cache=self.caches.get(layer),
                )
                self._update_cache(layer, current)
            logits = output_logits(x, params, config)
        self.position += len(tokens)
        return logits.data

    def step(self, token: int) -> np.ndarray:
        """Logits (V,) after one more token."""
        return self.feed([token])[0]

    def _update_cache(self, layer: int, current: LayerCache):
        keep = self.config.swa_window - 1
        previous = self.caches.get(layer)
        if previous is not None and len(previous):
            keys = F.concatenate([previous.keys, current.keys], axis=0)
            values = F.concatenate([previous.values, current.values], axis=0)
        else:
            keys, values = current.keys, current.values
        start = max(0, keys.shape[0] - keep)
        self.caches[layer] = LayerCache(keys=keys[start:], values=values[start:])

    def _grow_store(self, mid_hidden: Tensor):
        size = self.config.chunk_size
        if self.pending_mid is not None and self.pending_mid.shape[0]:
            mid_hidden = F.concatenate([self.pending_mid, mid_hidden], axis=0)
        complete = (mid_hidden.shape[0] // size) * size
        if complete:
            new_chunks = encode_chunks(mid_hidden[:complete], self.config, self.model.params)
            self.store = self.store.extend(new_chunks)
        self.pending_mid = mid_hidden[complete:]

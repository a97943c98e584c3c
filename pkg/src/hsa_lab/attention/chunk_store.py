"""The HSA context memory: per-chunk keys and values plus one landmark per chunk."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from hsa_lab.numerics import functional as F
from hsa_lab.numerics.tensor import Tensor, as_tensor, no_grad


@dataclass(frozen=True)
class ChunkStore:
    """Complete chunks only; a trailing partial chunk is never indexed.

    ``keys`` and ``values`` have shape (C, S, h_kv, d_h); ``landmarks`` has shape
    (C, d_r). The store is frozen: producing a longer memory returns a new store.
    """

    chunk_size: int
    """S, tokens per chunk"""
    keys: Tensor
    """K_[i] per chunk, (C, S, h_kv, d_h)"""
    values: Tensor
    """V_[i] per chunk, (C, S, h_kv, d_h)"""
    landmarks: Tensor
    """retrieval key per chunk, (C, d_r)"""

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size should be at least 1")
        if self.keys.ndim != 4 or self.values.ndim != 4 or self.landmarks.ndim != 2:
            raise ValueError(
                f"unexpected chunk store ranks: keys {self.keys.shape}, values {self.values.shape}, "
                f"landmarks {self.landmarks.shape}"
            )
        if not self.keys.shape[0] == self.values.shape[0] == self.landmarks.shape[0]:
            raise ValueError(
                "chunk counts differ: "
                f"keys {self.keys.shape[0]}, values {self.values.shape[0]}, "
                f"landmarks {self.landmarks.shape[0]}"
            )
        if self.keys.shape != self.values.shape:
            raise ValueError(f"keys {self.keys.shape} and values {self.values.shape} differ")
        if self.keys.shape[1] != self.chunk_size:
            raise ValueError(f"keys hold {self.keys.shape[1]} tokens per chunk, expected {self.chunk_size}")

    @classmethod
    def empty(
        cls, chunk_size: int, n_kv_heads: int, head_dim: int, retrieval_dim: int, dtype=None
    ) -> ChunkStore:
        """A store with zero chunks."""
        dtype = dtype or np.float32
        return cls(
            chunk_size=chunk_size,
            keys=Tensor(np.zeros((0, chunk_size, n_kv_heads, head_dim)), dtype=dtype),
            values=Tensor(np.zeros((0, chunk_size, n_kv_heads, head_dim)), dtype=dtype),
            landmarks=Tensor(np.zeros((0, retrieval_dim)), dtype=dtype),
        )

    @property
    def num_chunks(self) -> int:
        return self.landmarks.shape[0]

    @property
    def n_kv_heads(self) -> int:
        return self.keys.shape[2]

    @property
    def head_dim(self) -> int:
        return self.keys.shape[3]

    @property
    def retrieval_dim(self) -> int:
        return self.landmarks.shape[1]

    def __len__(self):
        return self.num_chunks

    def extend(self, other: ChunkStore) -> ChunkStore:
        """A new store holding this store's chunks followed by ``other``'s.

        Used by incremental decoding, so no gradient history is kept.
        """
        if other.chunk_size != self.chunk_size:
            raise ValueError(f"cannot extend chunk size {self.chunk_size} with {other.chunk_size}")
        if other.num_chunks == 0:
            return self
        if self.num_chunks == 0:
            return other
        with no_grad():
            return ChunkStore(
                chunk_size=self.chunk_size,
                keys=F.concatenate([self.keys, as_tensor(other.keys)], axis=0),
                values=F.concatenate([self.values, as_tensor(other.values)], axis=0),
                landmarks=F.concatenate([self.landmarks, as_tensor(other.landmarks)], axis=0),
            )

    def detach(self) -> ChunkStore:
        return ChunkStore(
            chunk_size=self.chunk_size,
            keys=self.keys.detach(),
            values=self.values.detach(),
            landmarks=self.landmarks.detach(),
        )

    def content_hash(self) -> str:
        """sha256 over chunk size, shapes and raw contents."""
        digest = hashlib.sha256()
        digest.update(str(self.chunk_size).encode())
        for tensor in (self.keys, self.values, self.landmarks):
            digest.update(str(tensor.shape).encode())
            digest.update(np.ascontiguousarray(tensor.data).tobytes())
        return digest.hexdigest()

"""Rotary position tables for the sliding-window path."""

from __future__ import annotations

import numpy as np

from hsa_lab.numerics import functional as F
from hsa_lab.numerics.tensor import Tensor


class RopeTable:
    """Precomputed cos/sin angles per position for rotate-half rotary embeddings.

    Frequencies follow ``base ** (-2i / head_dim)`` for each of the ``head_dim / 2``
    rotated pairs. The table grows on demand, so any absolute position can be
    rotated.
    """

    def __init__(self, head_dim: int, base: float = 10000.0, initial_length: int = 1024):
        if head_dim <= 0 or head_dim % 2:
            raise ValueError(f"head_dim should be a positive even number, got {head_dim}")
        if base <= 0:
            raise ValueError("rope base should be positive")
        self.head_dim = head_dim
        self.base = float(base)
        self.inv_freq = self.base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
        self._cos = np.zeros((0, head_dim))
        self._sin = np.zeros((0, head_dim))
        self._extend(initial_length)

    def __len__(self):
        return len(self._cos)

    def _extend(self, length: int):
        if length <= len(self._cos):
            return
        length = max(length, 2 * len(self._cos))
        positions = np.arange(length, dtype=np.float64)
        angles = np.outer(positions, self.inv_freq)
        angles = np.concatenate([angles, angles], axis=-1)
        self._cos = np.cos(angles)
        self._sin = np.sin(angles)

    def angles(self, positions) -> tuple[np.ndarray, np.ndarray]:
        """(cos, sin) arrays of shape (len(positions), head_dim), in float64."""
        positions = np.asarray(positions, dtype=np.int64)
        if positions.size and positions.min() < 0:
            raise ValueError("rope positions should be non-negative")
        self._extend(int(positions.max()) + 1 if positions.size else 0)
        return self._cos[positions], self._sin[positions]

    def apply(self, x: Tensor, positions) -> Tensor:
        """Rotate ``x`` of shape (n, heads, head_dim) at the given absolute positions."""
        if x.shape[-1] != self.head_dim:
            raise ValueError(f"expected head_dim {self.head_dim}, got {x.shape[-1]}")
        cos, sin = self.angles(positions)
        return F.rotary(x, cos[:, None, :], sin[:, None, :])

"""Closed-form attention cost per context length: score/fusion FLOPs and key/value memory.

Counts cover the attention scores and the value mixing only; projections and
feed-forward layers are identical across schemes and left out. All counts are
exact integers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import pandas as pd

from hsa_lab.model.config import ModelConfig

BYTES_PER_ELEMENT = {32: 4, 64: 8}
COST_COLUMNS = [
    "length",
    "full_flops",
    "swa_flops",
    "hsa_attend_flops",
    "retrieval_flops",
    "encoder_flops",
    "hsa_total_flops",
    "full_kv_bytes",
    "hsa_kv_bytes",
]
MAX_CROSSOVER_LENGTH = 2**40


def full_attention_flops(n: int, config: ModelConfig) -> int:
    """Causal full attention over every layer, ``2 n^2 d`` per layer."""
    return 2 * n * n * config.d_model * config.n_layers


def swa_flops(n: int, config: ModelConfig) -> int:
    """Sliding-window attention over every layer, ``2 n min(W, n) d`` per layer."""
    return 2 * n * min(config.swa_window, n) * config.d_model * config.n_layers


def hsa_attend_flops(n: int, config: ModelConfig) -> int:
    """Per-chunk attention and fusion, ``2 n K S d`` per HSA layer.

    K is not capped by the number of available chunks, so the term is exactly
    linear in ``n``.
    """
    return 2 * n * config.top_k * config.chunk_size * config.d_model * len(config.hsa_layers)


def retrieval_flops(n: int, config: ModelConfig) -> int:
    """Landmark scoring, ``n (n // S) d_r`` per HSA layer."""
    return n * (n // config.chunk_size) * config.retrieval_dim * len(config.hsa_layers)


def encoder_flops(n: int, config: ModelConfig) -> int:
    """Bidirectional attention inside each complete chunk (plus its summary token)."""
    tokens = config.chunk_size + 1
    return (n // config.chunk_size) * 2 * tokens * tokens * config.d_model * config.encoder_depth


def kv_width(config: ModelConfig) -> int:
    return config.n_kv_heads * config.head_dim


def full_kv_bytes(n: int, config: ModelConfig, precision: int = 32) -> int:
    """Keys and values of every token in every layer."""
    return 2 * n * kv_width(config) * config.n_layers * BYTES_PER_ELEMENT[precision]


def hsa_kv_bytes(n: int, config: ModelConfig, precision: int = 32) -> int:
    """Window caches of every layer plus the shared chunk memory and landmarks."""
    chunks = n // config.chunk_size
    elements = 2 * min(config.swa_window, n) * kv_width(config) * config.n_layers
    elements += 2 * chunks * config.chunk_size * kv_width(config)
    elements += chunks * config.retrieval_dim
    return elements * BYTES_PER_ELEMENT[precision]


def hsa_total_flops(n: int, config: ModelConfig) -> int:
    """Everything the hybrid model spends on attention at length ``n``."""
    return (
        swa_flops(n, config)
        + hsa_attend_flops(n, config)
        + retrieval_flops(n, config)
        + encoder_flops(n, config)
    )


def crossover_length(config: ModelConfig) -> int | None:
    """Smallest length where the hybrid's attention FLOPs drop below full attention.

    Found by doubling, then bisection. None if no crossover below 2**40.
    """

    def cheaper(n):
        return hsa_total_flops(n, config) < full_attention_flops(n, config)

    high = 1
    while not cheaper(high):
        high *= 2
        if high > MAX_CROSSOVER_LENGTH:
            return None
    low = high // 2
    while high - low > 1:
        middle = (low + high) // 2
        if cheaper(middle):
            high = middle
        else:
            low = middle
    return high


@dataclass
class CostReport:
    """Per-length cost of each scheme for one model configuration."""

    config: ModelConfig
    lengths: list[int]
    precision: int = 32
    rows: list[dict] = field(default_factory=list)
    crossover: int | None = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=COST_COLUMNS)

    def summary(self) -> str:
        lines = [self.to_frame().to_string(index=False)]
        if self.crossover is None:
            lines.append("no crossover: the hybrid never undercuts full attention")
        else:
            lines.append(f"crossover length: {self.crossover} tokens")
        return "\n".join(lines)


def cost_model(config: ModelConfig, lengths: list[int], precision: int = 32) -> CostReport:
    """Closed-form costs for every length, plus the crossover length.

    Raises:
        ValueError: if any length is not positive
    """
    if not lengths or any(int(length) < 1 for length in lengths):
        raise ValueError("lengths should be positive")
    if precision not in BYTES_PER_ELEMENT:
        raise ValueError("precision should be one of 32 or 64")
    rows = []
    for n in (int(length) for length in lengths):
        rows.append(
            {
                "length": n,
                "full_flops": full_attention_flops(n, config),
                "swa_flops": swa_flops(n, config),
                "hsa_attend_flops": hsa_attend_flops(n, config),
                "retrieval_flops": retrieval_flops(n, config),
                "encoder_flops": encoder_flops(n, config),
                "hsa_total_flops": hsa_total_flops(n, config),
                "full_kv_bytes": full_kv_bytes(n, config, precision),
                "hsa_kv_bytes": hsa_kv_bytes(n, config, precision),
            }
        )
    return CostReport(
        config=config,
        lengths=[int(length) for length in lengths],
        precision=precision,
        rows=rows,
        crossover=crossover_length(config),
    )

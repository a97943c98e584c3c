"""Building blocks shared by the decoder and the chunk encoder."""

from __future__ import annotations

from hsa_lab.model.params import ModelParams
from hsa_lab.numerics import functional as F
from hsa_lab.numerics.tensor import Tensor


def feed_forward(x: Tensor, params: ModelParams, prefix: str, eps: float) -> Tensor:
    """Pre-norm SiLU-gated feed-forward branch (residual not included)."""
    normed = F.rms_normalize(x, params[f"{prefix}.ffn_norm.gain"], eps=eps)
    return F.silu_ffn(
        normed,
        params[f"{prefix}.ffn.w_gate"],
        params[f"{prefix}.ffn.w_up"],
        params[f"{prefix}.ffn.w_down"],
    )


def project_heads(x: Tensor, weight, n_heads: int, head_dim: int) -> Tensor:
    """Linear projection of (..., d) into (..., heads, head_dim)."""
    projected = F.linear(x, weight)
    return F.reshape(projected, (*x.shape[:-1], n_heads, head_dim))


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, head_dim) -> (..., heads * head_dim)."""
    return F.reshape(x, (*x.shape[:-2], x.shape[-2] * x.shape[-1]))

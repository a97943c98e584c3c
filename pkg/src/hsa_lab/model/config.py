"""Architecture and runtime hyperparameters of the hybrid SWA+HSA decoder."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

# pylint: disable=too-many-instance-attributes

REQUIRED_MODEL_FIELDS = ("d_model", "n_layers", "n_heads", "chunk_size", "top_k", "swa_window")
RUNTIME_FIELDS = ("swa_window", "top_k", "hsa_block_size", "swa_block_size")
"""knobs that never change a parameter shape; a checkpoint is valid under any of their values"""


class ConfigValidationError(ValueError):
    """An invalid configuration value. ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ModelConfig:
    """Every hyperparameter of the model; the single source of truth for shapes.

    Layer indices are 0-based: layers ``0 .. L/2 - 1`` form the lower (SWA-only)
    decoder and ``L/2 .. L - 1`` the upper decoder, where HSA layers live.
    """

    d_model: int = 64
    """model width d"""
    n_layers: int = 4
    """total decoder layers L (even)"""
    n_heads: int = 4
    """query heads h"""
    chunk_size: int = 64
    """S, tokens per retrievable chunk"""
    top_k: int = 8
    """K, chunks retrieved per token (runtime knob)"""
    swa_window: int = 128
    """W, sliding-window length including the current token (runtime knob)"""
    vocab_size: int = 264
    """token vocabulary size"""
    n_kv_heads: int | None = None
    """key/value heads h_kv (grouped attention); defaults to n_heads"""
    head_dim: int | None = None
    """d_h; defaults to d_model / n_heads and must satisfy h * d_h = d"""
    hsa_layers: tuple[int, ...] | None = None
    """0-based upper-decoder layers carrying an HSA branch; defaults to the first
    upper layer and layer L-2 when they differ"""
    encoder_depth: int = 2
    """bidirectional blocks in the chunk encoder"""
    ffn_width: int | None = None
    """hidden width of the SiLU-gated feed-forward; defaults to 4 d"""
    retrieval_dim: int | None = None
    """d_r, dimension of landmarks and retrieval queries; defaults to d"""
    rope_base: float = 10000.0
    """rotary base frequency of the SWA path"""
    swa_positional: str = "rope"
    """positional scheme of the SWA path: "rope" or "none" """
    hsa_positional: str = "none"
    """positional scheme of the HSA path; only "none" is supported"""
    init_std: float = 0.02
    """standard deviation of the normal initialization"""
    norm_eps: float = 1e-6
    """epsilon of every RMS normalization"""
    hsa_block_size: int = 128
    """tokens per block in batched HSA (runtime knob, memory only)"""
    swa_block_size: int = 256
    """queries per block in windowed attention (runtime knob, memory only)"""

    def __post_init__(self):
        if self.n_kv_heads is None:
            object.__setattr__(self, "n_kv_heads", self.n_heads)
        if self.head_dim is None and self.n_heads > 0:
            object.__setattr__(self, "head_dim", self.d_model // self.n_heads)
        if self.ffn_width is None:
            object.__setattr__(self, "ffn_width", 4 * self.d_model)
        if self.retrieval_dim is None:
            object.__setattr__(self, "retrieval_dim", self.d_model)
        if self.hsa_layers is None and self.n_layers >= 2:
            first_upper = self.n_layers // 2
            layers = sorted({first_upper, max(first_upper, self.n_layers - 2)})
            object.__setattr__(self, "hsa_layers", tuple(layers))
        elif self.hsa_layers is not None:
            object.__setattr__(self, "hsa_layers", tuple(int(layer) for layer in self.hsa_layers))
        self._check_arguments()

    def _check_arguments(self):
        for name in ("d_model", "n_layers", "n_heads", "chunk_size", "top_k", "swa_window", "vocab_size"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigValidationError(name, f"should be a positive integer, got {value!r}")
        if self.n_layers % 2:
            raise ConfigValidationError("n_layers", f"should be even, got {self.n_layers}")
        if self.n_kv_heads < 1 or self.n_heads % self.n_kv_heads:
            raise ConfigValidationError("n_kv_heads", "should divide n_heads")
        if self.head_dim * self.n_heads != self.d_model:
            raise ConfigValidationError("head_dim", "n_heads * head_dim should equal d_model")
        if self.head_dim % 2:
            raise ConfigValidationError("head_dim", "should be even for rotary embeddings")
        if not self.hsa_layers:
            raise ConfigValidationError("hsa_layers", "at least one HSA layer is required")
        if len(set(self.hsa_layers)) != len(self.hsa_layers):
            raise ConfigValidationError("hsa_layers", "layers should be unique")
        for layer in self.hsa_layers:
            if not self.n_layers // 2 <= layer < self.n_layers:
                raise ConfigValidationError(
                    "hsa_layers",
                    f"layer {layer} is not in the upper decoder ({self.n_layers // 2}..{self.n_layers - 1})",
                )
        if self.encoder_depth < 1:
            raise ConfigValidationError("encoder_depth", "should be at least 1")
        if self.ffn_width < 1:
            raise ConfigValidationError("ffn_width", "should be positive")
        if self.retrieval_dim < 1:
            raise ConfigValidationError("retrieval_dim", "should be positive")
        if self.rope_base <= 0:
            raise ConfigValidationError("rope_base", "should be positive")
        if self.swa_positional not in ("rope", "none"):
            raise ConfigValidationError("swa_positional", "should be one of rope, none")
        if self.hsa_positional != "none":
            raise ConfigValidationError("hsa_positional", "the HSA path takes no positional encoding")
        if self.init_std <= 0:
            raise ConfigValidationError("init_std", "should be positive")
        if self.norm_eps < 0:
            raise ConfigValidationError("norm_eps", "should be non-negative")
        if self.hsa_block_size < 1 or self.swa_block_size < 1:
            raise ConfigValidationError("hsa_block_size", "block sizes should be positive")

    ## Layer structure

    @property
    def mid_layer(self) -> int:
        """Number of lower-decoder layers; the chunk memory is built from their output."""
        return self.n_layers // 2

    @property
    def lower_layers(self) -> range:
        return range(0, self.mid_layer)

    @property
    def upper_layers(self) -> range:
        return range(self.mid_layer, self.n_layers)

    def is_hsa_layer(self, layer: int) -> bool:
        return layer in self.hsa_layers

    ## Runtime knobs

    def with_runtime(self, swa_window: int | None = None, top_k: int | None = None) -> ModelConfig:
        """Same architecture with a different window and/or top-k."""
        changes = {}
        if swa_window is not None:
            changes["swa_window"] = swa_window
        if top_k is not None:
            changes["top_k"] = top_k
        return dataclasses.replace(self, **changes)

    ## Serialization

    def to_dict(self) -> dict:
        result = dataclasses.asdict(self)
        result["hsa_layers"] = list(self.hsa_layers)
        return result

    @classmethod
    def from_dict(cls, values: dict) -> ModelConfig:
        """Build from a dictionary, rejecting unknown keys and naming missing required ones."""
        if not isinstance(values, dict):
            raise ConfigValidationError("model", "should be a mapping")
        known = {field.name for field in dataclasses.fields(cls)}
        for key in values:
            if key not in known:
                raise ConfigValidationError(key, "unknown model field")
        for key in REQUIRED_MODEL_FIELDS:
            if key not in values:
                raise ConfigValidationError(key, "required model field is missing")
        kwargs = dict(values)
        if kwargs.get("hsa_layers") is not None:
            kwargs["hsa_layers"] = tuple(kwargs["hsa_layers"])
        return cls(**kwargs)

    def canonical_json(self) -> str:
        return canonical_json(self.to_dict())

    def config_hash(self) -> str:
        """sha256 of the full canonical config."""
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def architecture_hash(self) -> str:
        """sha256 over shape-defining fields only (runtime knobs excluded)."""
        values = {key: value for key, value in self.to_dict().items() if key not in RUNTIME_FIELDS}
        return hashlib.sha256(canonical_json(values).encode()).hexdigest()


def canonical_json(values: dict) -> str:
    """Sorted keys, no whitespace: identical content gives identical text.

    >>> canonical_json({"b": 1, "a": [1, 2]})
    '{"a":[1,2],"b":1}'
    """
    return json.dumps(values, sort_keys=True, separators=(",", ":"))

"""Named parameters of the decoder and their initialization."""

from __future__ import annotations

from collections.abc import Iterator, Mapping

import numpy as np

from hsa_lab.model.config import ModelConfig
from hsa_lab.numerics.tensor import Parameter, default_dtype

OUTPUT_PROJECTIONS = (".o_proj", ".w_down")
"""suffixes of projections writing into the residual stream; scaled by 1/sqrt(2L) at init"""


class ModelParams(Mapping):
    """Ordered mapping from unique parameter name to :class:`Parameter`."""

    def __init__(self, params: dict[str, Parameter] | None = None):
        self._params: dict[str, Parameter] = {}
        for name, param in (params or {}).items():
            self.add(param, name=name)

    def add(self, param: Parameter, name: str | None = None):
        name = name or param.name
        if name != param.name:
            raise ValueError(f"parameter registered as {name} is named {param.name}")
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name}")
        self._params[name] = param

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    @property
    def num_parameters(self) -> int:
        return int(sum(param.size for param in self._params.values()))

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self._params.values())).dtype

    def zero_grad(self):
        for param in self._params.values():
            param.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        """Copies of every parameter array, keyed by name."""
        return {name: param.data.copy() for name, param in self._params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        """Overwrite parameter values in place. Names and shapes must match exactly."""
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise ValueError(
                f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        for name, param in self._params.items():
            array = np.asarray(state[name])
            if array.shape != param.shape:
                raise ValueError(f"{name}: shape {array.shape} does not match {param.shape}")
            param.data = array.astype(param.dtype, copy=True)

    def astype(self, dtype) -> ModelParams:
        """New parameters with the same names and values cast to ``dtype``."""
        return ModelParams(
            {
                name: Parameter(np.array(param.data, dtype=dtype), name=name, dtype=dtype)
                for name, param in self.items()
            }
        )

    def copy(self) -> ModelParams:
        return self.astype(self.dtype)


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in a fixed order."""
    d = config.d_model
    q_width = config.n_heads * config.head_dim
    kv_width = config.n_kv_heads * config.head_dim
    ffn = config.ffn_width
    shapes: dict[str, tuple[int, ...]] = {"embed.weight": (config.vocab_size, d)}

    def feed_forward(prefix):
        shapes[f"{prefix}.ffn_norm.gain"] = (d,)
        shapes[f"{prefix}.ffn.w_gate"] = (d, ffn)
        shapes[f"{prefix}.ffn.w_up"] = (d, ffn)
        shapes[f"{prefix}.ffn.w_down"] = (ffn, d)

    for layer in range(config.n_layers):
        prefix = f"layer.{layer}"
        shapes[f"{prefix}.attn_norm.gain"] = (d,)
        shapes[f"{prefix}.swa.q_proj"] = (d, q_width)
        shapes[f"{prefix}.swa.k_proj"] = (d, kv_width)
        shapes[f"{prefix}.swa.v_proj"] = (d, kv_width)
        shapes[f"{prefix}.swa.o_proj"] = (q_width, d)
        if config.is_hsa_layer(layer):
            shapes[f"{prefix}.hsa.q_slc_proj"] = (d, config.retrieval_dim)
            shapes[f"{prefix}.hsa.q_attn_proj"] = (d, q_width)
            shapes[f"{prefix}.hsa.q_norm.gain"] = (config.head_dim,)
            shapes[f"{prefix}.hsa.k_norm.gain"] = (config.head_dim,)
            shapes[f"{prefix}.hsa.o_proj"] = (q_width, d)
        feed_forward(prefix)

    shapes["encoder.cls"] = (d,)
    shapes["encoder.pos_embed"] = (config.chunk_size + 1, d)
    for block in range(config.encoder_depth):
        prefix = f"encoder.block.{block}"
        shapes[f"{prefix}.attn_norm.gain"] = (d,)
        shapes[f"{prefix}.attn.q_proj"] = (d, q_width)
        shapes[f"{prefix}.attn.k_proj"] = (d, q_width)
        shapes[f"{prefix}.attn.v_proj"] = (d, q_width)
        shapes[f"{prefix}.attn.o_proj"] = (q_width, d)
        feed_forward(prefix)
    shapes["encoder.out_norm.gain"] = (d,)
    shapes["encoder.landmark_proj.weight"] = (d, config.retrieval_dim)
    shapes["encoder.landmark_proj.bias"] = (config.retrieval_dim,)
    shapes["encoder.k_proj"] = (d, kv_width)
    shapes["encoder.v_proj"] = (d, kv_width)

    shapes["final_norm.gain"] = (d,)
    shapes["lm_head.weight"] = (d, config.vocab_size)
    shapes["lm_head.bias"] = (config.vocab_size,)
    return shapes


def is_gain(name: str) -> bool:
    return name.endswith(".gain")


def is_bias(name: str) -> bool:
    return name.endswith(".bias")


def init_params(config: ModelConfig, seed: int, dtype=None) -> ModelParams:
    """Initialize every parameter deterministically from ``seed``.

    Projections and embeddings are drawn from normal(0, init_std); projections that
    write into the residual stream are further scaled by 1/sqrt(2L); gains start at
    exactly 1 and biases at 0. Values are drawn in float64 and then cast.
    """
    dtype = dtype or default_dtype()
    rng = np.random.default_rng(seed)
    output_scale = 1.0 / np.sqrt(2 * config.n_layers)
    params = ModelParams()
    for name, shape in parameter_shapes(config).items():
        if is_gain(name):
            values = np.ones(shape)
        elif is_bias(name):
            values = np.zeros(shape)
        else:
            values = rng.normal(0.0, config.init_std, size=shape)
            if name.endswith(OUTPUT_PROJECTIONS):
                values *= output_scale
        params.add(Parameter(values, name=name, dtype=dtype))
    return params

"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from hsa_lab.numerics.tensor import Tensor, no_grad

DEFAULT_STEP = 1e-5
DENOMINATOR_FLOOR = 1e-8


@dataclass(kw_only=True)
class GradCheckResult:
    """Comparison of analytic and numeric gradients for each checked input."""

    max_relative_error: float
    """worst elementwise relative error over all checked entries"""
    group_errors: dict[str, float] = field(default_factory=dict)
    """per input: worst absolute difference divided by the input's largest gradient magnitude"""
    element_errors: dict[str, float] = field(default_factory=dict)
    """per input: worst elementwise relative error"""
    n_checked: int = 0
    """number of input elements perturbed"""

    @property
    def max_group_error(self) -> float:
        return max(self.group_errors.values(), default=0.0)

    def passed(self, tolerance: float = 1e-4, mode: str = "elementwise") -> bool:
        """Did every checked entry agree within ``tolerance``?

        Args:
            tolerance (float): allowed relative error
            mode (str): ``"elementwise"`` uses ``|a - n| / max(|a|, |n|, 1e-8)`` per
                entry; ``"group"`` scales differences by each input's largest gradient.
        """
        if mode == "elementwise":
            return self.max_relative_error <= tolerance
        if mode == "group":
            return self.max_group_error <= tolerance
        raise ValueError(f"unknown gradcheck mode {mode}")


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, 1e-8)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOMINATOR_FLOOR)
    return np.abs(analytic - numeric) / denominator


def numeric_gradient(
    func: Callable[[], float], tensor: Tensor, positions: Sequence[int], step: float = DEFAULT_STEP
) -> np.ndarray:
    """Central differences of a scalar function w.r.t. selected flat entries of ``tensor``."""
    flat = tensor.data.reshape(-1)
    result = np.zeros(len(positions), dtype=np.float64)
    for slot, position in enumerate(positions):
        original = flat[position]
        flat[position] = original + step
        plus = func()
        flat[position] = original - step
        minus = func()
        flat[position] = original
        result[slot] = (plus - minus) / (2.0 * step)
    return result


def check_gradients(
    func: Callable[[], Tensor],
    inputs: Sequence[Tensor] | dict[str, Tensor],
    *,
    step: float = DEFAULT_STEP,
    max_elements: int | None = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare backward against central finite differences.

    The (possibly non-scalar) output of ``func`` is reduced to a scalar with a fixed
    random projection, so that outputs with constant sums (softmax) still have
    informative gradients. All inputs must be 64-bit.

    Args:
        func: zero-argument callable recomputing the output from ``inputs``
        inputs: tensors (requires_grad) to check, as a list or a name mapping
        step (float): finite-difference step
        max_elements (int): check at most this many entries per input, sampled at
            random but always including the entry with the largest analytic gradient
        seed (int): seed for the projection and the element sampling
    Returns:
        GradCheckResult
    """
    named = dict(inputs) if isinstance(inputs, dict) else {f"input_{i}": t for i, t in enumerate(inputs)}
    for name, tensor in named.items():
        if tensor.dtype != np.float64:
            raise ValueError(f"gradient checks run at 64-bit; {name} is {tensor.dtype}")
        tensor.grad = None

    rng = np.random.default_rng(seed)
    output = func()
    projection = rng.standard_normal(output.shape)
    (output * projection).sum().backward(grad=np.ones((), dtype=np.float64))

    def scalar_value() -> float:
        with no_grad():
            return float(np.sum(func().data * projection))

    max_error = 0.0
    group_errors = {}
    element_errors = {}
    n_checked = 0
    for name, tensor in named.items():
        analytic = np.zeros(tensor.shape) if tensor.grad is None else tensor.grad
        analytic = analytic.reshape(-1)
        positions = np.arange(tensor.size)
        if max_elements is not None and tensor.size > max_elements:
            sampled = rng.choice(tensor.size, size=max_elements - 1, replace=False)
            positions = np.unique(np.append(sampled, np.argmax(np.abs(analytic))))
        numeric = numeric_gradient(scalar_value, tensor, positions, step=step)
        errors = relative_error(analytic[positions], numeric)
        scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), DENOMINATOR_FLOOR)
        group_errors[name] = float(np.max(np.abs(analytic[positions] - numeric)) / scale)
        element_errors[name] = float(errors.max(initial=0.0))
        max_error = max(max_error, element_errors[name])
        n_checked += len(positions)

    return GradCheckResult(
        max_relative_error=max_error,
        group_errors=group_errors,
        element_errors=element_errors,
        n_checked=n_checked,
    )

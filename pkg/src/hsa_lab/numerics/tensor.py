"""Reverse-mode tape: tensors, parameters, precision and gradient-mode switches."""

from __future__ import annotations

import contextlib
import contextvars
from collections.abc import Callable, Sequence

import numpy as np

_DTYPE = contextvars.ContextVar("hsa_lab_dtype", default=np.dtype(np.float32))
_GRAD_ENABLED = contextvars.ContextVar("hsa_lab_grad_enabled", default=True)

PRECISIONS = {32: np.dtype(np.float32), 64: np.dtype(np.float64)}


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""


def default_dtype() -> np.dtype:
    """Element type used for new tensors in the current context."""
    return _DTYPE.get()


@contextlib.contextmanager
def precision(bits: int):
    """Select 32-bit or 64-bit elements for tensors created inside the block.

    >>> with precision(64):
    ...     print(Tensor([1.0, 2.0]).dtype)
    float64
    """
    if bits not in PRECISIONS:
        raise ValueError(f"precision should be one of {sorted(PRECISIONS)}, got {bits}")
    token = _DTYPE.set(PRECISIONS[bits])
    try:
        yield
    finally:
        _DTYPE.reset(token)


def grad_enabled() -> bool:
    """Are operations currently being recorded for backward?"""
    return _GRAD_ENABLED.get()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation, decoding, optimizer updates)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """An n-dimensional array of reals that records how it was computed.

    ``data`` is a numpy array; ``grad`` is accumulated by :meth:`backward` on
    leaves that require gradients. Non-leaf tensors keep references to their
    parents and a closure mapping the output cotangent to one cotangent per parent.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        array = np.asarray(data, dtype=dtype or default_dtype())
        self.data: np.ndarray = array
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
        """Create the output of a primitive, recording the graph only when needed."""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = grad_enabled() and any(parent.requires_grad for parent in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
            out.op = op
        else:
            out._parents = ()
            out._backward = None
            out.op = "leaf"
        return out

    ## Array-like properties

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        """The underlying array (not a copy)."""
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> Tensor:
        """Same data, no graph history."""
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad_flag}, op={self.op})"

    ## Differentiation

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``grad`` of every leaf that requires it.

        Intermediate cotangents live only for the duration of the call, so
        independent graphs sharing a leaf sum their contributions across calls.

        Args:
            grad: cotangent of this tensor. Defaults to ones, which requires a
                single-element tensor.
        """
        if not self.requires_grad:
            raise RuntimeError("backward called on a tensor that does not require gradients")
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"grad must be provided for non-scalar output of shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"grad shape {grad.shape} does not match tensor shape {self.shape}")

        order = _topological_order(self)
        cotangents: dict[int, np.ndarray] = {id(self): grad}
        for node in order:
            node_grad = cotangents.pop(id(node), None)
            if node_grad is None:
                continue
            if node.is_leaf:
                if node.grad is None:
                    node.grad = np.array(node_grad, dtype=node.dtype, copy=True)
                else:
                    node.grad += node_grad
                continue
            parent_grads = node._backward(node_grad)
            for parent, parent_grad in zip(node._parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in cotangents:
                    cotangents[key] = cotangents[key] + parent_grad
                else:
                    cotangents[key] = parent_grad

    ## Operator sugar, resolved lazily to avoid an import cycle with functional

    def __add__(self, other):
        from hsa_lab.numerics import functional as F

        return F.add(self, other)

    def __radd__(self, other):
        from hsa_lab.numerics import functional as F

        return F.add(other, self)

    def __sub__(self, other):
        from hsa_lab.numerics import functional as F

        return F.sub(self, other)

    def __rsub__(self, other):
        from hsa_lab.numerics import functional as F

        return F.sub(other, self)

    def __mul__(self, other):
        from hsa_lab.numerics import functional as F

        return F.mul(self, other)

    def __rmul__(self, other):
        from hsa_lab.numerics import functional as F

        return F.mul(other, self)

    def __truediv__(self, other):
        from hsa_lab.numerics import functional as F

        return F.div(self, other)

    def __neg__(self):
        from hsa_lab.numerics import functional as F

        return F.neg(self)

    def __matmul__(self, other):
        from hsa_lab.numerics import functional as F

        return F.matmul(self, other)

    def __getitem__(self, index):
        from hsa_lab.numerics import functional as F

        return F.getitem(self, index)

    def reshape(self, *shape):
        from hsa_lab.numerics import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from hsa_lab.numerics import functional as F

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from hsa_lab.numerics import functional as F

        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from hsa_lab.numerics import functional as F

        return F.mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A named, trainable leaf tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        if not name:
            raise ValueError("parameter name is required")
        self.name = name

    def __repr__(self):
        return f"Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(value, dtype=None) -> Tensor:
    """Wrap constants (python scalars, arrays) as non-differentiable tensors."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False, dtype=dtype)


def _topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` ordered so every node precedes its parents."""
    visited: set[int] = set()
    postorder: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            postorder.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    postorder.reverse()
    return postorder

"""Differentiable primitives.

Every function takes and returns :class:`~hsa_lab.numerics.tensor.Tensor` objects
(constants are wrapped automatically) and registers a backward closure that maps
the output cotangent to one cotangent per input.
"""

from __future__ import annotations

import numpy as np

from hsa_lab.numerics.tensor import ShapeError, Tensor, as_tensor


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast cotangent back down to an operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor):
        return as_tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as error:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from error


## Elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")

    def backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")

    def backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)

    return Tensor.from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")

    def backward(grad):
        grad_a = _unbroadcast(grad * b.data, a.shape) if a.requires_grad else None
        grad_b = _unbroadcast(grad * a.data, b.shape) if b.requires_grad else None
        return grad_a, grad_b

    return Tensor.from_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(grad):
        grad_a = _unbroadcast(grad / b.data, a.shape) if a.requires_grad else None
        grad_b = _unbroadcast(-grad * out / b.data, b.shape) if b.requires_grad else None
        return grad_a, grad_b

    return Tensor.from_op(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(-a.data, (a,), lambda grad: (-grad,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda grad: (grad * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(np.log(a.data), (a,), lambda grad: (grad / a.data,), "log")


def silu(a) -> Tensor:
    """x * sigmoid(x)."""
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig

    def backward(grad):
        return (grad * sig * (1.0 + a.data * (1.0 - sig)),)

    return Tensor.from_op(out, (a,), backward, "silu")


def masked_fill(a, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is True with a constant. No gradient flows there."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    out = np.where(mask, np.asarray(value, dtype=a.dtype), a.data)

    def backward(grad):
        return (np.where(mask, 0, grad).astype(grad.dtype, copy=False),)

    return Tensor.from_op(out, (a,), backward, "masked_fill")


## Reductions and shape manipulation


def sum(a, axis=None, keepdims=False) -> Tensor:  # pylint: disable=redefined-builtin
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, a.shape).copy(),)

    return Tensor.from_op(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as error:
        raise ShapeError(f"cannot reshape {original} into {tuple(shape)}") from error
    return Tensor.from_op(out, (a,), lambda grad: (grad.reshape(original),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return Tensor.from_op(out, (a,), lambda grad: (np.transpose(grad, inverse),), "transpose")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    out = np.broadcast_to(a.data, shape)
    return Tensor.from_op(out, (a,), lambda grad: (_unbroadcast(grad, a.shape),), "broadcast_to")


def getitem(a, index) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate in backward."""
    a = as_tensor(a)
    out = a.data[index]

    def backward(grad):
        full = np.zeros_like(a.data)
        np.add.at(full, index, grad)
        return (full,)

    return Tensor.from_op(np.asarray(out), (a,), backward, "getitem")


def concatenate(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concatenate needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as error:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from error
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(grad):
        return tuple(np.split(grad, splits, axis=axis))

    return Tensor.from_op(out, tensors, backward, "concatenate")


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("stack needs at least one tensor")
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as error:
        raise ShapeError(f"cannot stack shapes {[t.shape for t in tensors]}") from error

    def backward(grad):
        return tuple(np.moveaxis(grad, axis, 0))

    return Tensor.from_op(out, tensors, backward, "stack")


def take(a, indices, axis=0) -> Tensor:
    """``np.take`` along one axis with an integer index array of any shape."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    out = np.take(a.data, indices, axis=axis)

    def backward(grad):
        full = np.zeros_like(a.data)
        moved_full = np.moveaxis(full, axis, 0)
        lead = indices.ndim
        moved_grad = np.moveaxis(grad, tuple(range(axis, axis + lead)), tuple(range(lead)))
        np.add.at(moved_full, indices, moved_grad)
        return (full,)

    return Tensor.from_op(out, (a,), backward, "take")


def gather(a, indices, axis=-1) -> Tensor:
    """``np.take_along_axis``: pick one entry per slice along ``axis``."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != a.ndim:
        raise ShapeError(f"gather indices rank {indices.ndim} does not match input rank {a.ndim}")
    out = np.take_along_axis(a.data, indices, axis=axis)

    def backward(grad):
        full = np.zeros_like(a.data)
        grid = list(np.indices(indices.shape, sparse=True))
        grid[axis] = indices
        np.add.at(full, tuple(grid), grad)
        return (full,)

    return Tensor.from_op(out, (a,), backward, "gather")


## Linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, with numpy batch broadcasting."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(grad):
        grad_a = grad_b = None
        if a.requires_grad:
            grad_a = _unbroadcast(np.matmul(grad, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            grad_b = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), grad), b.shape)
        return grad_a, grad_b

    return Tensor.from_op(out, (a, b), backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in_features, out_features)."""
    x = as_tensor(x)
    weight = as_tensor(weight, dtype=x.dtype)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    flat = x.data.reshape(-1, weight.shape[0])
    out = flat @ weight.data
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias, dtype=x.dtype)
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents.append(bias)
    out = out.reshape(*x.shape[:-1], weight.shape[1])

    def backward(grad):
        flat_grad = grad.reshape(-1, weight.shape[1])
        grad_x = (flat_grad @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        grad_w = flat.T @ flat_grad if weight.requires_grad else None
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(flat_grad.sum(axis=0) if bias.requires_grad else None)
        return grads

    return Tensor.from_op(out, parents, backward, "linear")


def _parse_einsum(subscripts: str, n_operands: int) -> tuple[list[str], str]:
    if "->" not in subscripts or "." in subscripts:
        raise ValueError(f"einsum needs explicit output subscripts and no ellipsis: {subscripts!r}")
    inputs, output = subscripts.replace(" ", "").split("->")
    terms = inputs.split(",")
    if len(terms) != n_operands:
        raise ValueError(f"einsum subscripts {subscripts!r} name {len(terms)} operands, got {n_operands}")
    for term in terms + [output]:
        if len(set(term)) != len(term):
            raise ValueError(f"einsum repeated index within one term is not supported: {subscripts!r}")
    return terms, output


def einsum(subscripts: str, *operands) -> Tensor:
    """Einstein summation over any number of operands.

    Each operand's cotangent is itself an einsum of the output cotangent with the
    remaining operands; indices that appear only in that operand are broadcast back.
    """
    tensors = [as_tensor(op) for op in operands]
    terms, output = _parse_einsum(subscripts, len(tensors))
    sizes: dict[str, int] = {}
    for term, tensor in zip(terms, tensors):
        if len(term) != tensor.ndim:
            raise ShapeError(f"einsum term {term!r} does not match operand shape {tensor.shape}")
        for label, extent in zip(term, tensor.shape):
            if sizes.setdefault(label, extent) != extent:
                raise ShapeError(
                    f"einsum index {label!r} has extents {sizes[label]} and {extent}: "
                    f"{[t.shape for t in tensors]}"
                )
    out = np.einsum(subscripts, *[t.data for t in tensors], optimize=True)

    def backward(grad):
        grads = []
        for i, tensor in enumerate(tensors):
            if not tensor.requires_grad:
                grads.append(None)
                continue
            other_terms = [output] + [terms[j] for j in range(len(terms)) if j != i]
            other_data = [grad] + [tensors[j].data for j in range(len(terms)) if j != i]
            present = set("".join(other_terms))
            kept = "".join(label for label in terms[i] if label in present)
            partial = np.einsum(f"{','.join(other_terms)}->{kept}", *other_data, optimize=True)
            if kept != terms[i]:
                expand_shape = [sizes[label] if label in kept else 1 for label in terms[i]]
                partial = np.broadcast_to(partial.reshape(expand_shape), tensor.shape).copy()
            grads.append(partial)
        return grads

    return Tensor.from_op(np.asarray(out), tensors, backward, "einsum")


## Normalization and probability


def softmax(x, axis=-1, mask=None) -> Tensor:
    """Numerically stable softmax along ``axis``.

    Entries where ``mask`` is False receive probability exactly 0. Slices with no
    allowed entry produce all zeros.

    >>> print(softmax([0.0, 0.0]).data)
    [0.5 0.5]
    """
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise ValueError("softmax input contains NaN")
    data = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        data = np.where(mask, data, -np.inf)
    peak = np.max(data, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0)
    weights = np.exp(data - peak)
    if mask is not None:
        weights = np.where(mask, weights, 0)
    total = np.sum(weights, axis=axis, keepdims=True)
    out = (weights / np.where(total == 0, 1, total)).astype(x.dtype, copy=False)

    def backward(grad):
        inner = np.sum(grad * out, axis=axis, keepdims=True)
        return (out * (grad - inner),)

    return Tensor.from_op(out, (x,), backward, "softmax")


def rms_normalize(x, gain=None, axis=-1, eps: float = 1e-6) -> Tensor:
    """Divide each slice along ``axis`` by its root-mean-square, then scale by ``gain``.

    ``gain`` has one entry per element of the normalized axis (defaults to ones).
    """
    x = as_tensor(x)
    axis = axis % x.ndim
    extent = x.shape[axis]
    if extent < 1:
        raise ShapeError("rms_normalize needs a non-empty axis")
    gain_shape = [1] * x.ndim
    gain_shape[axis] = extent
    if gain is None:
        gain_tensor = None
        gain_data = np.ones(gain_shape, dtype=x.dtype)
    else:
        gain_tensor = as_tensor(gain, dtype=x.dtype)
        if gain_tensor.shape != (extent,):
            raise ShapeError(f"rms_normalize gain {gain_tensor.shape} does not match axis extent {extent}")
        gain_data = gain_tensor.data.reshape(gain_shape)

    inv_rms = 1.0 / np.sqrt(np.mean(np.square(x.data), axis=axis, keepdims=True) + eps)
    unit = x.data * inv_rms
    out = (unit * gain_data).astype(x.dtype, copy=False)

    def backward(grad):
        grad_unit = grad * gain_data
        grad_x = inv_rms * (grad_unit - unit * np.mean(grad_unit * unit, axis=axis, keepdims=True))
        grads = [grad_x.astype(x.dtype, copy=False)]
        if gain_tensor is not None:
            reduce_axes = tuple(i for i in range(x.ndim) if i != axis)
            grads.append(np.sum(grad * unit, axis=reduce_axes))
        return grads

    parents = (x,) if gain_tensor is None else (x, gain_tensor)
    return Tensor.from_op(out, parents, backward, "rms_normalize")


def cross_entropy(logits, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over positions selected by ``mask``.

    Args:
        logits: (n, V) unnormalized scores
        targets: (n,) integer token ids
        mask: (n,) booleans; defaults to every position
    Raises:
        ValueError: if the mask selects no position, or a target is out of range.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != logits.shape[:1]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} and targets {targets.shape} disagree")
    vocab = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ValueError(f"cross_entropy targets should be within [0, {vocab})")
    mask = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("cross_entropy mask selects no positions")

    rows = np.flatnonzero(mask)
    selected = logits.data[rows]
    peak = selected.max(axis=1, keepdims=True)
    shifted = selected - peak
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -log_probs[np.arange(count), targets[rows]].sum() / count

    def backward(grad):
        full = np.zeros_like(logits.data)
        probs = np.exp(log_probs)
        probs[np.arange(count), targets[rows]] -= 1.0
        full[rows] = probs * (grad / count)
        return (full,)

    return Tensor.from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


def embedding(weight, ids) -> Tensor:
    """Row lookup: ``weight[ids]``; backward scatters (and sums) into the looked-up rows."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ValueError(f"embedding ids should be within [0, {weight.shape[0]})")
    return take(weight, ids, axis=0)


def rotary(x, cos, sin) -> Tensor:
    """Rotate-half rotary transform ``x * cos + rotate_half(x) * sin``.

    ``cos`` and ``sin`` are constants broadcastable to ``x``; the last axis of
    ``x`` is split into two halves that form the rotated pairs.
    """
    x = as_tensor(x)
    if x.shape[-1] % 2:
        raise ShapeError(f"rotary needs an even last axis, got {x.shape}")
    cos = np.asarray(cos, dtype=x.dtype)
    sin = np.asarray(sin, dtype=x.dtype)
    out = x.data * cos + _rotate_half(x.data) * sin

    def backward(grad):
        return (grad * cos - _rotate_half(grad * sin),)

    return Tensor.from_op(out, (x,), backward, "rotary")


def _rotate_half(array: np.ndarray) -> np.ndarray:
    half = array.shape[-1] // 2
    return np.concatenate([-array[..., half:], array[..., :half]], axis=-1)


## Composite blocks


def silu_ffn(x, w_gate, w_up, w_down) -> Tensor:
    """SiLU-gated feed-forward: ``(silu(x W_gate) * (x W_up)) W_down``."""
    return linear(mul(silu(linear(x, w_gate)), linear(x, w_up)), w_down)

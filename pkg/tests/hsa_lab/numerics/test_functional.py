"""Gradient and value checks of the differentiable primitives"""

import numpy as np
import numpy.testing as npt
import pytest

from hsa_lab.numerics import functional as F
from hsa_lab.numerics.gradcheck import check_gradients
from hsa_lab.numerics.tensor import Tensor, precision

# pylint: disable=missing-function-docstring


def leaf(rng, *shape, positive=False):
    values = rng.standard_normal(shape)
    if positive:
        values = np.abs(values) + 0.5
    return Tensor(values, requires_grad=True, dtype=np.float64)


def assert_gradients(func, inputs):
    result = check_gradients(func, inputs, seed=7)
    assert result.passed(1e-6, mode="group"), result.group_errors
    assert result.n_checked > 0


@pytest.mark.parametrize(
    "op",
    ["add", "sub", "mul", "div", "exp", "log", "silu", "neg"],
)
def test_elementwise_gradients(op, rng):
    a = leaf(rng, 3, 4)
    b = leaf(rng, 4, positive=True)
    functions = {
        "add": lambda: F.add(a, b),
        "sub": lambda: F.sub(a, b),
        "mul": lambda: F.mul(a, b),
        "div": lambda: F.div(a, b),
        "exp": lambda: F.exp(a),
        "log": lambda: F.log(b),
        "silu": lambda: F.silu(a),
        "neg": lambda: F.neg(a),
    }
    assert_gradients(functions[op], [a, b])


def test_reduction_and_shape_gradients(rng):
    a = leaf(rng, 2, 3, 4)
    assert_gradients(lambda: F.sum(a, axis=1), [a])
    assert_gradients(lambda: F.mean(a, axis=(0, 2), keepdims=True), [a])
    assert_gradients(lambda: F.reshape(a, (6, 4)), [a])
    assert_gradients(lambda: F.transpose(a, (2, 0, 1)), [a])
    assert_gradients(lambda: F.getitem(a, (slice(None), 1)), [a])
    assert_gradients(lambda: F.broadcast_to(F.sum(a, axis=0, keepdims=True), (5, 3, 4)), [a])


def test_indexing_gradients(rng):
    a = leaf(rng, 5, 3)
    b = leaf(rng, 2, 3)
    repeated = np.array([[0, 4], [4, 4]])
    assert_gradients(lambda: F.take(a, repeated, axis=0), [a])
    assert_gradients(lambda: F.gather(a, np.array([[2, 0], [1, 1], [0, 0], [2, 2], [1, 0]]), axis=-1), [a])
    assert_gradients(lambda: F.concatenate([a, b], axis=0), [a, b])
    assert_gradients(lambda: F.stack([a[:2], b], axis=1), [a, b])
    assert_gradients(lambda: F.masked_fill(a, a.data > 0, -3.0), [a])
    assert_gradients(lambda: F.embedding(a, np.array([1, 1, 3])), [a])


def test_linear_algebra_gradients(rng):
    x = leaf(rng, 2, 3, 4)
    weight = leaf(rng, 4, 5)
    bias = leaf(rng, 5)
    other = leaf(rng, 5, 2)
    assert_gradients(lambda: F.linear(x, weight, bias), [x, weight, bias])
    assert_gradients(lambda: F.matmul(F.linear(x, weight), other), [x, weight, other])
    assert_gradients(lambda: F.einsum("bnd,de->bne", x, weight), [x, weight])
    assert_gradients(lambda: F.einsum("bnd,bmd->bnm", x, x), [x])


def test_normalization_gradients(rng):
    x = leaf(rng, 3, 6)
    gain = leaf(rng, 6)
    mask = np.array([[True, False, True, True, False, True]] * 3)
    assert_gradients(lambda: F.softmax(x, axis=-1), [x])
    assert_gradients(lambda: F.softmax(x, axis=0), [x])
    assert_gradients(lambda: F.softmax(x, axis=-1, mask=mask), [x])
    assert_gradients(lambda: F.rms_normalize(x, gain), [x, gain])
    assert_gradients(lambda: F.rms_normalize(x, axis=0), [x])


def test_loss_and_block_gradients(rng):
    logits = leaf(rng, 4, 7)
    targets = np.array([1, 6, 0, 3])
    mask = np.array([True, False, True, True])
    assert_gradients(lambda: F.cross_entropy(logits, targets, mask), [logits])

    x = leaf(rng, 3, 2, 4)
    angles = rng.uniform(0, np.pi, size=(3, 1, 4))
    assert_gradients(lambda: F.rotary(x, np.cos(angles), np.sin(angles)), [x])

    h = leaf(rng, 3, 4)
    w_gate, w_up, w_down = leaf(rng, 4, 8), leaf(rng, 4, 8), leaf(rng, 8, 4)
    assert_gradients(lambda: F.silu_ffn(h, w_gate, w_up, w_down), [h, w_gate, w_up, w_down])


def test_softmax_values():
    probs = F.softmax(Tensor([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]), axis=-1)
    npt.assert_allclose(probs.data.sum(axis=-1), [1.0, 1.0], rtol=1e-6)
    npt.assert_allclose(probs.data[1], [1 / 3] * 3, rtol=1e-6)

    ## large logits do not overflow
    probs = F.softmax(Tensor([1000.0, 1000.0]))
    npt.assert_allclose(probs.data, [0.5, 0.5])


def test_softmax_mask():
    mask = np.array([[True, False, True], [False, False, False]])
    probs = F.softmax(Tensor(np.ones((2, 3))), axis=-1, mask=mask)
    npt.assert_array_equal(probs.data[0], [0.5, 0.0, 0.5])
    ## a row with nothing allowed is all zeros
    npt.assert_array_equal(probs.data[1], [0.0, 0.0, 0.0])

    with pytest.raises(ValueError, match="NaN"):
        F.softmax(Tensor([np.nan, 1.0]))


def test_cross_entropy_values():
    vocab = 264
    logits = Tensor(np.zeros((5, vocab)))
    loss = F.cross_entropy(logits, np.arange(5))
    npt.assert_allclose(loss.item(), np.log(vocab), rtol=1e-6)

    with pytest.raises(ValueError, match="no positions"):
        F.cross_entropy(logits, np.arange(5), np.zeros(5, dtype=bool))
    with pytest.raises(ValueError, match="targets"):
        F.cross_entropy(logits, np.full(5, vocab))


def test_rms_normalize_values():
    with precision(64):
        x = Tensor([[3.0, 4.0], [0.0, 2.0]])
        out = F.rms_normalize(x, eps=0.0)
    rms = np.sqrt(np.mean(x.data**2, axis=-1, keepdims=True))
    npt.assert_allclose(out.data, x.data / rms)
    npt.assert_allclose(np.mean(out.data**2, axis=-1), [1.0, 1.0])


def test_gradcheck_rejects_low_precision():
    x = Tensor([1.0, 2.0], requires_grad=True, dtype=np.float32)
    with pytest.raises(ValueError, match="64-bit"):
        check_gradients(lambda: F.exp(x), [x])


def test_gradcheck_detects_wrong_gradient(rng):
    """A primitive with a deliberately wrong backward fails the check."""
    x = leaf(rng, 4)

    def broken():
        return Tensor.from_op(x.data**2, (x,), lambda grad: (grad * x.data,), "broken_square")

    result = check_gradients(broken, {"x": x})
    assert not result.passed(1e-4)
    assert set(result.element_errors) == {"x"}


def test_gradcheck_sampling(rng):
    x = leaf(rng, 40, 10)
    result = check_gradients(lambda: F.softmax(x, axis=-1), [x], max_elements=25)
    assert result.n_checked <= 25
    assert result.passed(1e-6, mode="group")

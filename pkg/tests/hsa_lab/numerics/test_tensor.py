"""Tests of the differentiable tensor and its contexts"""

import numpy as np
import numpy.testing as npt
import pytest

from hsa_lab.numerics import functional as F
from hsa_lab.numerics.tensor import Parameter, ShapeError, Tensor, default_dtype, no_grad, precision


def test_precision_context():
    assert default_dtype() == np.float32
    assert Tensor([1.0]).dtype == np.float32
    with precision(64):
        assert Tensor([1.0]).dtype == np.float64
        assert Parameter(np.zeros(3), name="w").dtype == np.float64
    assert default_dtype() == np.float32

    with pytest.raises(ValueError, match="precision"):
        with precision(16):
            pass


def test_backward_accumulates():
    """Independent graphs sharing a leaf add up their gradients."""
    with precision(64):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        (x * x).sum().backward()
        npt.assert_allclose(x.grad, [2.0, 4.0, 6.0])

        (x * 3.0).sum().backward()
        npt.assert_allclose(x.grad, [5.0, 7.0, 9.0])

        x.zero_grad()
        assert x.grad is None


def test_shared_subexpression():
    """A node used twice in one graph receives both contributions."""
    with precision(64):
        x = Tensor([2.0], requires_grad=True)
        y = x * x
        (y + y).sum().backward()
        npt.assert_allclose(x.grad, [8.0])


def test_backward_errors():
    constant = Tensor([1.0, 2.0])
    with pytest.raises(RuntimeError, match="does not require gradients"):
        constant.sum().backward()

    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError, match="non-scalar"):
        (x * 2.0).backward()
    with pytest.raises(ShapeError, match="does not match"):
        (x * 2.0).backward(grad=np.ones(3))


def test_no_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert y.is_leaf
    assert (x * 2.0).requires_grad


def test_shape_errors():
    with pytest.raises(ShapeError, match="do not broadcast"):
        F.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ShapeError, match="inner extents"):
        F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        F.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    ## shape errors are value errors
    with pytest.raises(ValueError):
        F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_detach():
    x = Tensor([1.0], requires_grad=True)
    y = (x * 2.0).detach()
    assert not y.requires_grad
    npt.assert_allclose(y.data, [2.0])

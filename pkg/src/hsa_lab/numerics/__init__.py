"""Minimal reverse-mode differentiation substrate."""

from .tensor import Parameter, ShapeError, Tensor, default_dtype, grad_enabled, no_grad, precision

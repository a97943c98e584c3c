"""AdamW with decoupled weight decay, global-norm clipping and the learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from hsa_lab.model.params import ModelParams, is_bias, is_gain

EXP_AVG = "exp_avg."
EXP_AVG_SQ = "exp_avg_sq."


class AdamW:
    """AdamW over a :class:`ModelParams` collection.

    Weight decay is decoupled and applied before the moment update. Gains and
    biases are not decayed. Parameters whose gradient is None are skipped
    entirely (their moments do not advance).
    """

    def __init__(
        self,
        params: ModelParams,
        lr: float = 3e-4,
        betas: tuple[float, float] = (0.9, 0.95),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        if lr < 0:
            raise ValueError("lr should be non-negative")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError("betas should be within [0, 1)")
        if eps <= 0:
            raise ValueError("eps should be positive")
        if weight_decay < 0:
            raise ValueError("weight_decay should be non-negative")
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.exp_avg = {name: np.zeros_like(param.data) for name, param in params.items()}
        self.exp_avg_sq = {name: np.zeros_like(param.data) for name, param in params.items()}

    def decays(self, name: str) -> bool:
        return not (is_gain(name) or is_bias(name))

    def step(self, lr: float | None = None):
        """Apply one update using the gradients currently stored on the parameters."""
        lr = self.lr if lr is None else lr
        beta1, beta2 = self.betas
        self.step_count += 1
        correction1 = 1.0 - beta1**self.step_count
        correction2 = 1.0 - beta2**self.step_count
        for name, param in self.params.items():
            grad = param.grad
            if grad is None:
                continue
            data = param.data
            if self.weight_decay and self.decays(name):
                data = data - lr * self.weight_decay * data
            self.exp_avg[name] = beta1 * self.exp_avg[name] + (1.0 - beta1) * grad
            self.exp_avg_sq[name] = beta2 * self.exp_avg_sq[name] + (1.0 - beta2) * grad * grad
            denominator = np.sqrt(self.exp_avg_sq[name] / correction2) + self.eps
            update = (self.exp_avg[name] / correction1) / denominator
            param.data = (data - lr * update).astype(param.dtype, copy=False)

    def zero_grad(self):
        self.params.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment arrays keyed ``exp_avg.<param>`` / ``exp_avg_sq.<param>``."""
        arrays = {EXP_AVG + name: array for name, array in self.exp_avg.items()}
        arrays.update({EXP_AVG_SQ + name: array for name, array in self.exp_avg_sq.items()})
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int):
        """Restore moments and the step counter. Every moment shape must match its parameter."""
        for name, param in self.params.items():
            for prefix, target in ((EXP_AVG, self.exp_avg), (EXP_AVG_SQ, self.exp_avg_sq)):
                key = prefix + name
                if key not in arrays:
                    raise ValueError(f"optimizer state is missing {key}")
                array = np.asarray(arrays[key])
                if array.shape != param.shape:
                    raise ValueError(f"{key}: shape {array.shape} does not match {param.shape}")
                target[name] = array.astype(param.dtype, copy=True)
        self.step_count = int(step_count)


def global_grad_norm(params: ModelParams) -> float:
    """L2 norm over every available gradient, accumulated in 64-bit."""
    total = 0.0
    for param in params.values():
        if param.grad is not None:
            total += float(np.sum(np.square(param.grad, dtype=np.float64)))
    return math.sqrt(total)


def clip_grad_norm(params: ModelParams, max_norm: float = 1.0) -> tuple[float, float]:
    """Scale all gradients so their global norm is at most ``max_norm``.

    Returns:
        (norm before clipping, norm after clipping)
    """
    if max_norm <= 0:
        raise ValueError("max_norm should be positive")
    norm = global_grad_norm(params)
    if not norm > max_norm:
        return norm, norm
    scale = max_norm / (norm + 1e-6)
    for param in params.values():
        if param.grad is not None:
            param.grad = (param.grad * scale).astype(param.grad.dtype, copy=False)
    return norm, global_grad_norm(params)


def learning_rate(
    step: int,
    base_lr: float,
    warmup_steps: int = 0,
    total_steps: int = 1,
    schedule: str = "constant",
    min_lr_ratio: float = 0.1,
) -> float:
    """Learning rate at 0-based ``step``: linear warmup, then constant or cosine decay.

    >>> learning_rate(0, 1.0, warmup_steps=4)
    0.25
    >>> learning_rate(10, 1.0, warmup_steps=4)
    1.0
    """
    if warmup_steps and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    if schedule == "constant":
        return base_lr
    if schedule == "cosine":
        span = max(1, total_steps - warmup_steps)
        progress = min(1.0, (step - warmup_steps) / span)
        return base_lr * (min_lr_ratio + (1.0 - min_lr_ratio) * 0.5 * (1.0 + math.cos(math.pi * progress)))
    raise ValueError(f"unknown schedule {schedule!r}")

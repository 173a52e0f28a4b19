"""Optimizer, learning-rate schedule and gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class WarmupCosine:
    """Linear warmup to base_lr, then cosine decay to min_lr, per step."""

    base_lr: float
    min_lr: float
    warmup_steps: int
    total_steps: int

    def lr_at(self, step: int) -> float:
        if step < 0 or step >= self.total_steps:
            raise ValueError(f"lr_at: step {step} outside [0, {self.total_steps})")
        if step < self.warmup_steps:
            return self.base_lr * (step + 1) / self.warmup_steps
        span = max(1, self.total_steps - self.warmup_steps)
        progress = (step - self.warmup_steps) / span
        return self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + math.cos(math.pi * progress))


def global_grad_norm(params: list[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return math.sqrt(total)


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm."""
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(scale)
    return norm


class AdamW:
    """Adam with decoupled weight decay.

    Decay applies only to rank >= 2 weights; biases, norm affines and
    other vectors are exempt.  Raises on non-finite gradients rather
    than stepping through them.
    """

    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for _, p in self.named_params]
        self._v = [np.zeros_like(p.data) for _, p in self.named_params]

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for (name, p), m, v in zip(self.named_params, self._m, self._v):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"AdamW: non-finite gradient in {name}")
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and p.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data -= p.data.dtype.type(lr) * update

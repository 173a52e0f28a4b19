"""Lightweight parameter containers for model blocks.

Modules discover their parameters by walking instance attributes in
construction order, which keeps checkpoint names stable across runs.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .ops import BNState
from .tensor import Tensor, default_dtype


class Module:
    """Base class: recursive parameter/buffer discovery plus train mode."""

    training: bool = True

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_params(f"{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, BNState):
                yield f"{name}.running_mean", val.running_mean
                yield f"{name}.running_var", val.running_var
            elif isinstance(val, Module):
                yield from val.named_buffers(f"{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def param_count(self, include_bias: bool = True) -> int:
        return sum(p.size for _, p in self.named_params()
                   if include_bias or not p.is_bias)

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for val in vars(self).values():
            if isinstance(val, Module):
                val.train(mode)
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        item.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


def uniform_param(rng: np.random.Generator, shape: tuple[int, ...],
                  fan_in: int) -> Tensor:
    """Standard uniform init scaled by 1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(fan_in)
    t = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True,
               dtype=default_dtype())
    return t


def zeros_param(shape: tuple[int, ...], bias: bool = False) -> Tensor:
    t = Tensor(np.zeros(shape), requires_grad=True, dtype=default_dtype())
    t.is_bias = bias
    return t


def ones_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, dtype=default_dtype())


def const_param(values: np.ndarray) -> Tensor:
    return Tensor(np.asarray(values), requires_grad=True, dtype=default_dtype())

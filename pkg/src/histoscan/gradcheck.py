"""Finite-difference gradient oracle.

Central differences in float64 against the engine's analytic gradients.
This is the ground truth every primitive and block is audited against.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad

REL_FLOOR = 1e-8


def finite_diff_check(fn: Callable[..., Tensor],
                      inputs: Tensor | Sequence[Tensor],
                      eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference grads.

    fn must be a pure scalar-valued function of the given tensors (it may
    close over parameters; only ``inputs`` are perturbed and checked).
    Inputs must be float64; raises otherwise, and raises if fn does not
    return a scalar.
    """
    ins = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    for t in ins:
        if t.dtype != np.float64:
            raise TypeError("finite_diff_check: inputs must be float64 (oracle mode)")

    prev_flags = [t.requires_grad for t in ins]
    for t in ins:
        t.requires_grad = True
        t.grad = None
    try:
        out = fn(*ins)
        if not isinstance(out, Tensor) or out.size != 1:
            raise ValueError("finite_diff_check: fn must return a scalar tensor")
        out.backward()
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                    for t in ins]

        max_rel = 0.0
        for t, an in zip(ins, analytic):
            flat = t.data.reshape(-1)
            an_flat = an.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                with no_grad():
                    flat[i] = orig + eps
                    f_plus = fn(*ins).item()
                    flat[i] = orig - eps
                    f_minus = fn(*ins).item()
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * eps)
                denom = max(abs(an_flat[i]), abs(fd), REL_FLOOR)
                max_rel = max(max_rel, abs(an_flat[i] - fd) / denom)
        return max_rel
    finally:
        for t, flag in zip(ins, prev_flags):
            t.requires_grad = flag
            t.grad = None

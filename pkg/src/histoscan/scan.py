"""Selective state-space scan layers.

Each layer owns a positive diagonal state matrix (stored as log values)
plus the projections that read the per-token input drive, readout and
step size from the sequence it is scanning.  The bidirectional variant
runs two independent parameter sets, one over the reversed sequence, and
sums the results.
"""

from __future__ import annotations

import numpy as np

from .module import Module, uniform_param, zeros_param
from .ops import linear, softplus, ssm_scan
from .tensor import Tensor, default_dtype, exp, reverse


def discretize(A: np.ndarray, B_t: np.ndarray, delta_t: np.ndarray):
    """Zero-order-hold discretisation of one token's continuous params.

    A: (N,) positive diagonal; B_t: (N,); delta_t: per-channel step (D,).
    Returns (Abar, Bbar), each (D, N): Abar = exp(-delta A) in (0, 1) for
    delta > 0, Bbar = delta * B.
    """
    A = np.asarray(A, dtype=np.float64)
    B_t = np.asarray(B_t, dtype=np.float64)
    delta_t = np.atleast_1d(np.asarray(delta_t, dtype=np.float64))
    if np.any(A <= 0):
        raise ValueError("discretize: A must be strictly positive")
    Abar = np.exp(-delta_t[:, None] * A[None, :])
    Bbar = delta_t[:, None] * B_t[None, :]
    return Abar, Bbar


class SelectiveScan(Module):
    """Unidirectional scan over (..., L, D) sequences.

    The step size, input and readout projections are computed from the
    scanned sequence itself, so the layer is self-contained: y = scan(u).
    """

    def __init__(self, dim: int, state_dim: int, rng: np.random.Generator):
        self.dim = dim
        self.state_dim = state_dim
        # positive diagonal, initialised to 1..N so decay rates spread
        self.log_A = Tensor(np.log(np.arange(1, state_dim + 1, dtype=np.float64)),
                            requires_grad=True, dtype=default_dtype())
        self.w_delta = uniform_param(rng, (dim, dim), dim)
        # bias chosen so initial softplus steps land in [0.01, 0.1]
        dt = rng.uniform(0.01, 0.1, size=dim)
        self.b_delta = Tensor(np.log(np.expm1(dt)), requires_grad=True,
                              dtype=default_dtype())
        self.b_delta.is_bias = True
        self.w_B = uniform_param(rng, (dim, state_dim), dim)
        self.b_B = zeros_param((state_dim,), bias=True)
        self.w_C = uniform_param(rng, (dim, state_dim), dim)
        self.b_C = zeros_param((state_dim,), bias=True)

    def forward(self, u: Tensor) -> Tensor:
        if u.shape[-1] != self.dim:
            raise ValueError(f"SelectiveScan: input dim {u.shape[-1]} != {self.dim}")
        delta = softplus(linear(u, self.w_delta, self.b_delta))
        Bseq = linear(u, self.w_B, self.b_B)
        Cseq = linear(u, self.w_C, self.b_C)
        A = exp(self.log_A)
        return ssm_scan(u, delta, A, Bseq, Cseq)

    __call__ = forward


class BidirectionalScan(Module):
    """Forward scan plus a reversed scan with its own parameters, summed."""

    def __init__(self, dim: int, state_dim: int, rng: np.random.Generator):
        self.fwd = SelectiveScan(dim, state_dim, rng)
        self.bwd = SelectiveScan(dim, state_dim, rng)

    def forward(self, u: Tensor) -> Tensor:
        y_f = self.fwd(u)
        y_b = reverse(self.bwd(reverse(u, axis=-2)), axis=-2)
        return y_f + y_b

    __call__ = forward

"""Two-branch token mixer: a bidirectional selective scan next to a local
convolution, fused by channel concatenation.

The input is projected twice to half width.  Branch one runs a separable
conv, SiLU, then the bidirectional scan; branch two runs a standard conv
and SiLU.  The concatenated halves are mixed back to full width by a
linear output projection.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .module import Module, ones_param, uniform_param, zeros_param
from .ops import conv1d, conv1d_depthwise, layer_norm, linear, silu
from .scan import BidirectionalScan
from .tensor import Tensor, concat


def sep_conv1d(x, w_dw: Tensor, w_pw: Tensor, b_pw: Tensor | None = None) -> Tensor:
    """Separable 1-D conv: centered depthwise pass then pointwise mixing."""
    return linear(conv1d_depthwise(x, w_dw), w_pw, b_pw)


def sep_conv_param_ratio(channels: int, kernel: int) -> Fraction:
    """Weight count of a separable conv over a standard conv, exactly.

    Depthwise (C*k) plus pointwise (C*C) against full (k*C*C); reduces to
    1/k + 1/C.
    """
    sep = channels * kernel + channels * channels
    full = kernel * channels * channels
    return Fraction(sep, full)


def vanilla_scan_block_param_count(dim: int, state_dim: int, kernel: int,
                                   include_bias: bool = True) -> int:
    """Reference count for the classic causal-scan block at width C.

    Layout: input projection C -> 2C, depthwise causal conv on C, one
    unidirectional scan (step/input/readout projections plus diagonal
    state), output projection C -> C.
    """
    C, N, k = dim, state_dim, kernel
    n = (C * 2 * C) + (C * k) + (C * C) + 2 * (C * N) + N + (C * C)
    if include_bias:
        n += 2 * C + C + 2 * N + C
    return n


class ScanConvMixer(Module):
    """The two-branch mixer block; width-preserving on (..., L, C)."""

    def __init__(self, dim: int, state_dim: int, kernel: int,
                 rng: np.random.Generator):
        if dim % 2 != 0:
            raise ValueError(f"ScanConvMixer: dim {dim} must be even")
        self.dim = dim
        self.state_dim = state_dim
        self.kernel = kernel
        half = dim // 2
        self.w_in_scan = uniform_param(rng, (dim, half), dim)
        self.b_in_scan = zeros_param((half,), bias=True)
        self.w_in_conv = uniform_param(rng, (dim, half), dim)
        self.b_in_conv = zeros_param((half,), bias=True)
        # separable conv: depthwise kernel carries no bias
        self.w_sep_dw = uniform_param(rng, (half, kernel), kernel)
        self.w_sep_pw = uniform_param(rng, (half, half), half)
        self.b_sep_pw = zeros_param((half,), bias=True)
        self.w_reg = uniform_param(rng, (kernel, half, half), kernel * half)
        self.b_reg = zeros_param((half,), bias=True)
        self.scan = BidirectionalScan(half, state_dim, rng)
        self.w_out = uniform_param(rng, (dim, dim), dim)
        self.b_out = zeros_param((dim,), bias=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ValueError(f"ScanConvMixer: input dim {x.shape[-1]} != {self.dim}")
        u = silu(sep_conv1d(linear(x, self.w_in_scan, self.b_in_scan),
                            self.w_sep_dw, self.w_sep_pw, self.b_sep_pw))
        x1 = self.scan(u)
        x2 = silu(conv1d(linear(x, self.w_in_conv, self.b_in_conv),
                         self.w_reg, self.b_reg))
        return linear(concat([x1, x2], axis=-1), self.w_out, self.b_out)

    __call__ = forward


class ResidualMixer(Module):
    """Pre-norm residual wrapper: x + mixer(layer_norm(x))."""

    def __init__(self, dim: int, state_dim: int, kernel: int,
                 rng: np.random.Generator):
        self.ln_gamma = ones_param((dim,))
        self.ln_beta = zeros_param((dim,), bias=True)
        self.mixer = ScanConvMixer(dim, state_dim, kernel, rng)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.mixer(layer_norm(x, self.ln_gamma, self.ln_beta))

    __call__ = forward

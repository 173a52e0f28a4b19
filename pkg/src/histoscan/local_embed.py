"""Residual local-perception embedding applied on each stage's 2-D grid.

Default form: squeeze to half width with a pointwise conv, a depthwise
k x k conv in the middle, expand back with a zero-initialised pointwise
conv, and add the input.  The zero init makes the block an exact
identity at construction, so stages start from a stable features-through
state.

A ghost-style variant (primary conv + cheap depthwise features,
concatenated) is available behind a config flag; the residual form is
the default and the one the presets use.
"""

from __future__ import annotations

import numpy as np

from .module import Module, ones_param, uniform_param, zeros_param
from .ops import BNState, batch_norm, conv2d, conv2d_depthwise, linear, relu
from .tensor import Tensor, concat


class LocalEmbed(Module):
    def __init__(self, dim: int, kernel: int, rng: np.random.Generator,
                 ghost: bool = False):
        if dim % 2 != 0:
            raise ValueError(f"LocalEmbed: dim {dim} must be even")
        self.dim = dim
        self.kernel = kernel
        self.ghost = ghost
        half = dim // 2
        if ghost:
            self.w_primary = uniform_param(rng, (kernel, kernel, dim, half),
                                           kernel * kernel * dim)
            self.b_primary = zeros_param((half,), bias=True)
        else:
            self.w_squeeze = uniform_param(rng, (dim, half), dim)
            self.b_squeeze = zeros_param((half,), bias=True)
        self.bn1_gamma = ones_param((half,))
        self.bn1_beta = zeros_param((half,), bias=True)
        self.bn1_state = BNState.create(half)
        self.w_dw = uniform_param(rng, (half, kernel, kernel), kernel * kernel)
        self.bn2_gamma = ones_param((half,))
        self.bn2_beta = zeros_param((half,), bias=True)
        self.bn2_state = BNState.create(half)
        if not ghost:
            # zero init: block output == input until training moves it
            self.w_expand = zeros_param((half, dim))
            self.b_expand = zeros_param((dim,), bias=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ValueError(f"LocalEmbed: input dim {x.shape[-1]} != {self.dim}")
        if self.ghost:
            primary = relu(batch_norm(conv2d(x, self.w_primary, self.b_primary),
                                      self.bn1_gamma, self.bn1_beta,
                                      self.bn1_state, self.training))
            cheap = relu(batch_norm(conv2d_depthwise(primary, self.w_dw),
                                    self.bn2_gamma, self.bn2_beta,
                                    self.bn2_state, self.training))
            return concat([primary, cheap], axis=-1)
        squeezed = relu(batch_norm(linear(x, self.w_squeeze, self.b_squeeze),
                                   self.bn1_gamma, self.bn1_beta,
                                   self.bn1_state, self.training))
        local = batch_norm(conv2d_depthwise(squeezed, self.w_dw),
                           self.bn2_gamma, self.bn2_beta,
                           self.bn2_state, self.training)
        return linear(relu(local), self.w_expand, self.b_expand) + x

    __call__ = forward

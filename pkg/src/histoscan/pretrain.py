"""Masked-token pretraining.

Patches are embedded first; a random 75% of token positions are replaced
by a learnable mask token; the full-length masked grid runs through the
encoder; a light decoder (linear bridge, nearest-neighbour upsample back
to the stage-1 grid, two mixer blocks, linear pixel head) predicts raw
patch pixels.  The loss is mean squared error over masked patches only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import Encoder
from .mixer import ResidualMixer
from .module import Module, uniform_param, zeros_param
from .ops import linear, upsample_nearest2d
from .tensor import Tensor, default_dtype, reshape, sum_


@dataclass(frozen=True)
class MaskSpec:
    grid: tuple[int, int]
    indices: np.ndarray  # sorted flat indices of masked positions

    @property
    def n_masked(self) -> int:
        return int(self.indices.size)

    def as_grid(self) -> np.ndarray:
        """0/1 mask of shape (gh, gw, 1); 1 marks masked positions."""
        gh, gw = self.grid
        flat = np.zeros(gh * gw, dtype=np.float64)
        flat[self.indices] = 1.0
        return flat.reshape(gh, gw, 1)


def make_mask(grid: tuple[int, int], ratio: float,
              rng: np.random.Generator) -> MaskSpec:
    """Uniform mask without replacement; |M| = round(ratio * tokens)."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"make_mask: ratio {ratio} outside (0, 1]")
    gh, gw = grid
    total = gh * gw
    n = int(round(ratio * total))
    indices = np.sort(rng.choice(total, size=n, replace=False))
    return MaskSpec(grid, indices)


def stack_masks(specs: list[MaskSpec]) -> np.ndarray:
    """(B, gh, gw, 1) mask array from per-item specs."""
    return np.stack([s.as_grid() for s in specs])


def apply_mask(tokens: Tensor, mask: np.ndarray, mask_token: Tensor) -> Tensor:
    """Replace masked grid positions with the learnable token.

    tokens: (..., gh, gw, d); mask: broadcastable (..., gh, gw, 1) of 0/1.
    Gradients flow to the token from masked positions only and to the
    original tokens from kept positions only.
    """
    if mask.shape[-1] != 1 or mask.ndim > tokens.ndim:
        raise ValueError(f"apply_mask: mask shape {mask.shape} for tokens {tokens.shape}")
    m = Tensor(mask, dtype=tokens.dtype)
    keep = Tensor(1.0 - mask, dtype=tokens.dtype)
    return tokens * keep + mask_token * m


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, S, S, C) pixels -> (B, G, G, patch*patch*C) targets.

    Layout matches the encoder's space_to_depth so heads and targets
    line up element for element.
    """
    B, H, W, C = images.shape
    g = H // patch
    x = images.reshape(B, g, patch, W // patch, patch, C)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(B, g, W // patch, patch * patch * C)


def unpatchify(tokens: np.ndarray, patch: int, chans: int = 3) -> np.ndarray:
    """Inverse of patchify: (B, G, G, patch*patch*C) -> (B, S, S, C)."""
    B, gh, gw, P = tokens.shape
    if P != patch * patch * chans:
        raise ValueError(f"unpatchify: last dim {P} != {patch}*{patch}*{chans}")
    x = tokens.reshape(B, gh, gw, patch, patch, chans)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(B, gh * patch, gw * patch, chans)


class PretrainModel(Module):
    def __init__(self, encoder: Encoder, rng: np.random.Generator,
                 decoder_dim: int = 128, decoder_depth: int = 2):
        cfg = encoder.cfg
        self.encoder = encoder
        self.decoder_dim = decoder_dim
        self.mask_token = Tensor(rng.normal(0, 0.02, size=cfg.dims[0]),
                                 requires_grad=True, dtype=default_dtype())
        self.w_bridge = uniform_param(rng, (cfg.dims[-1], decoder_dim), cfg.dims[-1])
        self.b_bridge = zeros_param((decoder_dim,), bias=True)
        self.w_up = uniform_param(rng, (decoder_dim, decoder_dim), decoder_dim)
        self.b_up = zeros_param((decoder_dim,), bias=True)
        self.blocks = [ResidualMixer(decoder_dim, cfg.state_dim, cfg.kernel, rng)
                       for _ in range(decoder_depth)]
        out_dim = cfg.patch_size * cfg.patch_size * cfg.in_chans
        self.w_pixels = uniform_param(rng, (decoder_dim, out_dim), decoder_dim)
        self.b_pixels = zeros_param((out_dim,), bias=True)

    def decode(self, last_feat: Tensor) -> Tensor:
        """Stage-4 features -> per-token pixel predictions on the full grid."""
        full = self.encoder.cfg.grid_size
        if full % last_feat.shape[-3] != 0:
            raise ValueError(f"decode: feature grid {last_feat.shape[-3]} does "
                             f"not divide the token grid {full}")
        x = linear(last_feat, self.w_bridge, self.b_bridge)
        x = upsample_nearest2d(x, full // last_feat.shape[-3])
        x = linear(x, self.w_up, self.b_up)
        lead, (gh, gw, d) = x.shape[:-3], x.shape[-3:]
        tokens = reshape(x, lead + (gh * gw, d))
        for block in self.blocks:
            tokens = block(tokens)
        x = reshape(tokens, lead + (gh, gw, d))
        return linear(x, self.w_pixels, self.b_pixels)

    def predict(self, images: Tensor, mask: np.ndarray) -> Tensor:
        """Masked forward: images (B, S, S, C), mask (B, G, G, 1)."""
        tokens = self.encoder.patch_embed(images)
        masked = apply_mask(tokens, mask, self.mask_token)
        feats = self.encoder.encode_tokens(masked)
        return self.decode(feats[-1])

    __call__ = predict


def masked_recon_loss(preds: Tensor, targets: np.ndarray,
                      mask: np.ndarray) -> Tensor:
    """MSE over masked patches only.

    preds: (B, G, G, P) tensor; targets: same-shape array; mask:
    (B, G, G, 1) 0/1.  Raises if the mask selects nothing.
    """
    if preds.shape != targets.shape:
        raise ValueError(f"masked_recon_loss: preds {preds.shape} != targets {targets.shape}")
    n_masked = float(mask.sum())
    if n_masked == 0:
        raise ValueError("masked_recon_loss: empty mask set")
    weight = mask / (n_masked * preds.shape[-1])
    diff = preds - Tensor(targets, dtype=preds.dtype)
    return sum_(diff * diff * Tensor(weight, dtype=preds.dtype))

"""Gradient-weighted class activation maps over the last-stage features."""

from __future__ import annotations

import numpy as np

from .augment import bilinear_resize
from .backbone import Encoder
from .tensor import Tensor, mul, sum_


def gradcam(model: Encoder, image: np.ndarray, class_index: int,
            stage: int = -1) -> np.ndarray:
    """Heatmap in [0, 1] at input resolution for one normalized image.

    Channel weights are the spatial means of the class-logit gradient on
    the chosen stage map (last by default; earlier stages give finer
    spatial resolution); the weighted map is rectified and, unless it is
    constant, min-max normalized.
    """
    model.eval()
    if not 0 <= class_index < model.cfg.num_classes:
        raise ValueError(f"gradcam: class {class_index} outside [0, {model.cfg.num_classes})")
    n_stages = len(model.cfg.dims)
    if not -n_stages <= stage < n_stages:
        raise ValueError(f"gradcam: stage {stage} outside +-{n_stages}")
    x = Tensor(image[None].astype(np.float32))
    feats = model.encode(x)
    target = feats[stage]
    logits = model.head(feats[-1])
    onehot = np.zeros(logits.shape, dtype=logits.data.dtype)
    onehot[0, class_index] = 1.0
    score = sum_(mul(logits, Tensor(onehot, dtype=logits.dtype)))
    model.zero_grad()
    score.backward()
    g = target.grad[0]                     # (h, w, C)
    weights = g.mean(axis=(0, 1))          # (C,)
    cam = np.maximum((target.data[0] * weights).sum(axis=-1), 0.0)
    model.zero_grad()
    lo, hi = float(cam.min()), float(cam.max())
    if hi > lo:
        cam = (cam - lo) / (hi - lo)
    size = image.shape[0]
    return np.clip(bilinear_resize(cam[..., None], size, size)[..., 0], 0.0, 1.0)


def _ramp(cam: np.ndarray) -> np.ndarray:
    """Simple blue->green->red colormap for a [0, 1] map."""
    r = np.clip(1.5 - np.abs(4 * cam - 3.0), 0, 1)
    g = np.clip(1.5 - np.abs(4 * cam - 2.0), 0, 1)
    b = np.clip(1.5 - np.abs(4 * cam - 1.0), 0, 1)
    return np.stack([r, g, b], axis=-1)


def overlay(raw_image: np.ndarray, cam: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend a heatmap over a uint8 RGB image; returns uint8."""
    base = raw_image.astype(np.float64) / 255.0
    mixed = (1 - alpha) * base + alpha * _ramp(cam)
    return np.round(np.clip(mixed, 0, 1) * 255).astype(np.uint8)

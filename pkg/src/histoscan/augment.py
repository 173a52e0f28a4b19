"""Data-level augmentation: resize, random resized crop, mixup.

These operate on plain numpy image arrays before tensors enter the tape.
"""

from __future__ import annotations

import math

import numpy as np


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (H, W, C) with bilinear sampling, half-pixel centers."""
    H, W = img.shape[:2]
    img = img.astype(np.float64, copy=False)
    src_i = np.clip((np.arange(out_h) + 0.5) * (H / out_h) - 0.5, 0, H - 1)
    src_j = np.clip((np.arange(out_w) + 0.5) * (W / out_w) - 0.5, 0, W - 1)
    i0 = np.floor(src_i).astype(np.int64)
    j0 = np.floor(src_j).astype(np.int64)
    i1 = np.minimum(i0 + 1, H - 1)
    j1 = np.minimum(j0 + 1, W - 1)
    wi = (src_i - i0)[:, None, None]
    wj = (src_j - j0)[None, :, None]
    r0 = img[i0]
    r1 = img[i1]
    top = r0[:, j0] * (1 - wj) + r0[:, j1] * wj
    bot = r1[:, j0] * (1 - wj) + r1[:, j1] * wj
    return top * (1 - wi) + bot * wi


def random_resized_crop(img: np.ndarray, rng: np.random.Generator,
                        out_size: int, scale: tuple[float, float] = (0.2, 1.0),
                        ratio: tuple[float, float] = (3 / 4, 4 / 3)) -> np.ndarray:
    """Crop a random area/aspect window and resize to out_size.

    Ten sampling attempts; on failure falls back to a center crop of the
    largest square.
    """
    H, W = img.shape[:2]
    area = H * W
    log_lo, log_hi = math.log(ratio[0]), math.log(ratio[1])
    for _ in range(10):
        target_area = area * rng.uniform(scale[0], scale[1])
        aspect = math.exp(rng.uniform(log_lo, log_hi))
        w = int(round(math.sqrt(target_area * aspect)))
        h = int(round(math.sqrt(target_area / aspect)))
        if 0 < w <= W and 0 < h <= H:
            top = int(rng.integers(0, H - h + 1))
            left = int(rng.integers(0, W - w + 1))
            return bilinear_resize(img[top:top + h, left:left + w], out_size, out_size)
    side = min(H, W)
    top = (H - side) // 2
    left = (W - side) // 2
    return bilinear_resize(img[top:top + side, left:left + side], out_size, out_size)


def to_onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"to_onehot: label outside [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def mixup(x: np.ndarray, y_onehot: np.ndarray, alpha: float,
          rng: np.random.Generator):
    """Per-item convex mixing of inputs and one-hot labels.

    Returns (x', y', lam, perm); the identical per-item lam is used for
    images and labels so the pair stays auditable.
    """
    B = x.shape[0]
    lam = rng.beta(alpha, alpha, size=B)
    perm = rng.permutation(B)
    lam_x = lam.reshape((B,) + (1,) * (x.ndim - 1))
    x_mixed = lam_x * x + (1.0 - lam_x) * x[perm]
    y_mixed = lam[:, None] * y_onehot + (1.0 - lam[:, None]) * y_onehot[perm]
    return x_mixed.astype(x.dtype, copy=False), y_mixed, lam, perm

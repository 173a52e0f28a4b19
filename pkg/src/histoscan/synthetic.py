"""Synthetic image and bag generators for smoke training and the demos.

Textures are two-colour sinusoidal gratings with random orientation,
frequency and phase; blob images are soft colour bumps on a dark field.
Both live in [0, 1] RGB.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import write_image


def _grating(size: int, rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(2.0, 5.0)
    phase = rng.uniform(0, 2 * np.pi)
    c0 = rng.uniform(0.05, 0.95, size=3)
    c1 = rng.uniform(0.05, 0.95, size=3)
    yy, xx = np.mgrid[0:size, 0:size] / size
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    return c0 + (c1 - c0) * wave[..., None]


def _blobs(size: int, rng: np.random.Generator) -> np.ndarray:
    # base overlaps the grating brightness range so mean intensity alone
    # cannot separate the two families; structure has to do the work
    base = rng.uniform(0.05, 0.6, size=3)
    img = np.broadcast_to(base, (size, size, 3)).copy()
    yy, xx = np.mgrid[0:size, 0:size] / size
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        sigma = rng.uniform(0.08, 0.2)
        colour = rng.uniform(0.4, 0.95, size=3)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        img = img + bump[..., None] * (colour - img)
    return img


def _finish(img: np.ndarray, rng: np.random.Generator, noise: float) -> np.ndarray:
    if noise > 0:
        img = img + rng.normal(0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def texture_images(n: int, size: int, rng: np.random.Generator,
                   noise: float = 0.02) -> np.ndarray:
    return np.stack([_finish(_grating(size, rng), rng, noise) for _ in range(n)])


def two_class_images(n_per_class: int, size: int, rng: np.random.Generator,
                     noise: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Blobs (class 0) vs gratings (class 1), shuffled."""
    imgs = [_finish(_blobs(size, rng), rng, noise) for _ in range(n_per_class)]
    imgs += [_finish(_grating(size, rng), rng, noise) for _ in range(n_per_class)]
    labels = np.array([0] * n_per_class + [1] * n_per_class, dtype=np.int64)
    order = rng.permutation(len(labels))
    return np.stack(imgs)[order], labels[order]


def write_image_dataset(root, kind: str, n_per_class: int, size: int,
                        seed: int) -> list[str]:
    """Write a class-per-directory PNG dataset; returns class names."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    if kind == "textures":
        names = ["texture"]
        stacks = [texture_images(n_per_class, size, rng)]
    elif kind == "shapes":
        names = ["blobs", "stripes"]
        stacks = [np.stack([_finish(_blobs(size, rng), rng, 0.05) for _ in range(n_per_class)]),
                  np.stack([_finish(_grating(size, rng), rng, 0.05) for _ in range(n_per_class)])]
    else:
        raise ValueError(f"write_image_dataset: unknown kind {kind!r}")
    for name, stack in zip(names, stacks):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(stack):
            write_image(d / f"{name}_{i:04d}.png", np.round(img * 255).astype(np.uint8))
    return names


def synthetic_bags(n_bags: int, tiles_range: tuple[int, int], embed_dim: int,
                   rng: np.random.Generator,
                   missing_rate: float = 0.3) -> list[dict]:
    """Bags whose class signal is a mean shift along a random direction.

    Returns dicts with embeddings, coords, and a two-task label record
    ('grade' classification with 3 classes, 'risk' regression); labels
    drop out independently at missing_rate.
    """
    directions = rng.standard_normal((3, embed_dim))
    bags = []
    for b in range(n_bags):
        n = int(rng.integers(tiles_range[0], tiles_range[1] + 1))
        grade = int(rng.integers(0, 3))
        emb = rng.standard_normal((n, embed_dim)) + 0.8 * directions[grade]
        coords = np.stack([rng.integers(0, 64, n), rng.integers(0, 64, n)], axis=1)
        labels = {}
        if rng.uniform() > missing_rate:
            labels["grade"] = grade
        if rng.uniform() > missing_rate:
            labels["risk"] = float(grade) + float(rng.normal(0, 0.1))
        bags.append({
            "slide_id": f"slide_{b:04d}",
            "embeddings": emb.astype(np.float32),
            "coords": coords.astype(np.int32),
            "labels": labels,
        })
    return bags

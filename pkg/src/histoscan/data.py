"""Dataset indexing, deterministic splits, image IO and preprocessing.

Datasets are directories with one subdirectory per class.  Only PNG and
PPM files are accepted; other formats must be converted upstream.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .augment import bilinear_resize

IMAGE_EXTENSIONS = (".png", ".ppm")

SPLIT_FRACTIONS = {"train": 7, "val": 1, "test": 2}  # tenths


def read_image(path) -> np.ndarray:
    """Decode a PNG or PPM file to a (H, W, 3) uint8 array."""
    path = Path(path)
    if path.suffix.lower() not in IMAGE_EXTENSIONS:
        raise ValueError(f"read_image: unsupported format {path.suffix!r} "
                         f"(only {IMAGE_EXTENSIONS}); convert upstream")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_image(path, arr: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() not in IMAGE_EXTENSIONS:
        raise ValueError(f"write_image: unsupported format {path.suffix!r}")
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)


@dataclass
class DatasetSplits:
    classes: list[str]
    files: dict[str, list[tuple[str, int]]]  # split -> [(path, class index)]

    def counts(self) -> dict[str, int]:
        return {split: len(items) for split, items in self.files.items()}


def _split_counts(n: int) -> dict[str, int]:
    counts = {split: (n * tenths) // 10 for split, tenths in SPLIT_FRACTIONS.items()}
    remainder = n - sum(counts.values())
    for split in ("train", "val", "test"):
        if remainder == 0:
            break
        counts[split] += 1
        remainder -= 1
    return counts


def split_dataset(root, seed: int) -> DatasetSplits:
    """7:1:2 per-class split, a pure function of (seed, sorted file list).

    Remainder items go to train, then val, then test.  Per-class
    shuffles derive from (seed, class index) so results are machine
    independent.
    """
    root = Path(root)
    classes = sorted(d.name for d in root.iterdir() if d.is_dir())
    if not classes:
        raise ValueError(f"split_dataset: no class directories under {root}")
    files: dict[str, list[tuple[str, int]]] = {"train": [], "val": [], "test": []}
    for ci, cls in enumerate(classes):
        names = sorted(p.name for p in (root / cls).iterdir()
                       if p.suffix.lower() in IMAGE_EXTENSIONS)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, ci))))
        order = rng.permutation(len(names))
        counts = _split_counts(len(names))
        lo = 0
        for split in ("train", "val", "test"):
            for idx in order[lo:lo + counts[split]]:
                files[split].append((str(root / cls / names[idx]), ci))
            lo += counts[split]
    return DatasetSplits(classes, files)


def load_split(splits: DatasetSplits, split: str, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Read and resize one split: returns float images in [0, 1] plus labels."""
    items = splits.files[split]
    if not items:
        raise ValueError(f"load_split: split {split!r} is empty")
    images = np.empty((len(items), size, size, 3), dtype=np.float32)
    labels = np.empty(len(items), dtype=np.int64)
    for i, (path, label) in enumerate(items):
        img = read_image(path).astype(np.float64) / 255.0
        if img.shape[:2] != (size, size):
            img = bilinear_resize(img, size, size)
        images[i] = img
        labels[i] = label
    return images, labels


def compute_norm_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over an image stack (train split only)."""
    flat = images.reshape(-1, images.shape[-1]).astype(np.float64)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    if np.any(std == 0):
        raise ValueError("compute_norm_stats: zero-variance channel")
    return mean, std


def normalize(images: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return ((images - mean) / std).astype(np.float32)


def denormalize(images: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return images * std + mean

"""Slide-level aggregation over tile embedding bags, with multi-task heads.

Bags hold per-tile embeddings plus grid coordinates.  Tiles are ordered
canonically (row-major by coordinate) before the sequence model runs, so
bag predictions do not depend on file order.  Task labels may be missing
per slide; absent tasks contribute exactly nothing to the joint loss.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mixer import ResidualMixer
from .module import Module, uniform_param, zeros_param
from .ops import gap1d, linear, mean_abs_error, cross_entropy
from .tensor import Tensor, no_grad, take_rows

BAG_MAGIC = b"HSBG"
BAG_VERSION = 1


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str  # "classification" | "regression"
    num_classes: int = 0

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ValueError(f"TaskSpec: unknown kind {self.kind!r}")
        if self.kind == "classification" and self.num_classes < 2:
            raise ValueError(f"TaskSpec {self.name}: need num_classes >= 2")


@dataclass
class Bag:
    slide_id: str
    embeddings: np.ndarray  # (n_tiles, embed_dim) float32
    coords: np.ndarray      # (n_tiles, 2) int, (row, col)
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.embeddings.ndim != 2 or self.coords.shape != (self.embeddings.shape[0], 2):
            raise ValueError(f"Bag {self.slide_id}: embeddings {self.embeddings.shape} "
                             f"vs coords {self.coords.shape}")

    @property
    def n_tiles(self) -> int:
        return self.embeddings.shape[0]


def canonical_order(coords: np.ndarray) -> np.ndarray:
    """Row-major raster permutation over (row, col) tile coordinates."""
    return np.lexsort((coords[:, 1], coords[:, 0]))


class MilModel(Module):
    def __init__(self, embed_dim: int, tasks: list[TaskSpec],
                 rng: np.random.Generator, model_dim: int = 64,
                 depth: int = 2, state_dim: int = 8, kernel: int = 3):
        self.embed_dim = embed_dim
        self.tasks = list(tasks)
        self.w_in = uniform_param(rng, (embed_dim, model_dim), embed_dim)
        self.b_in = zeros_param((model_dim,), bias=True)
        self.blocks = [ResidualMixer(model_dim, state_dim, kernel, rng)
                       for _ in range(depth)]
        self.heads = []
        for task in self.tasks:
            out = task.num_classes if task.kind == "classification" else 1
            self.heads.append(uniform_param(rng, (model_dim, out), model_dim))
            b = zeros_param((out,), bias=True)
            self.heads.append(b)

    def aggregate(self, embeddings: Tensor, coords: np.ndarray) -> Tensor:
        """Ordered tile sequence -> pooled slide vector."""
        emb = take_rows(embeddings, canonical_order(coords))
        x = linear(emb, self.w_in, self.b_in)
        for block in self.blocks:
            x = block(x)
        return gap1d(x)

    def forward(self, bag: Bag, embeddings: Tensor | None = None) -> dict[str, Tensor]:
        """Per-task slide outputs (logits or a 1-dim regression value)."""
        emb = embeddings if embeddings is not None else Tensor(bag.embeddings)
        pooled = self.aggregate(emb, bag.coords)
        outputs = {}
        for i, task in enumerate(self.tasks):
            w, b = self.heads[2 * i], self.heads[2 * i + 1]
            outputs[task.name] = linear(pooled, w, b)
        return outputs

    __call__ = forward

    def joint_loss(self, bag: Bag) -> tuple[Tensor | None, list[str]]:
        """Sum of losses over tasks with labels present.

        Tasks without a label are never touched, so their heads receive
        exactly zero gradient from this bag.  Returns (loss, used tasks);
        loss is None when no task has a label.
        """
        pooled = None
        loss = None
        used = []
        for i, task in enumerate(self.tasks):
            if task.name not in bag.labels or bag.labels[task.name] is None:
                continue
            if pooled is None:
                pooled = self.aggregate(Tensor(bag.embeddings), bag.coords)
            w, b = self.heads[2 * i], self.heads[2 * i + 1]
            out = linear(pooled, w, b)
            if task.kind == "classification":
                target = np.array([int(bag.labels[task.name])])
                term = cross_entropy(_as_row(out), target)
            else:
                target = np.full(out.shape, float(bag.labels[task.name]))
                term = mean_abs_error(out, target)
            loss = term if loss is None else loss + term
            used.append(task.name)
        return loss, used


def _as_row(t: Tensor) -> Tensor:
    from .tensor import reshape
    return reshape(t, (1, t.shape[-1]))


def predict_with_resampling(model: MilModel, bag: Bag, tiles_per_round: int,
                            n_rounds: int = 15, seed: int = 0,
                            replace: bool = False) -> dict[str, np.ndarray]:
    """Average per-task outputs over tile resamples, pre-softmax.

    Each round draws tiles_per_round tiles (without replacement unless
    replace=True) using its own RNG stream derived from (seed, round).
    A deterministic pure function of (bag, seed).
    """
    if tiles_per_round <= 0:
        raise ValueError("predict_with_resampling: tiles_per_round must be positive")
    if tiles_per_round > bag.n_tiles and not replace:
        raise ValueError(f"predict_with_resampling: {tiles_per_round} tiles from "
                         f"{bag.n_tiles} without replacement")
    sums: dict[str, np.ndarray] = {}
    with no_grad():
        for r in range(n_rounds):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, r))))
            idx = rng.choice(bag.n_tiles, size=tiles_per_round, replace=replace)
            sub = Bag(bag.slide_id, bag.embeddings[idx], bag.coords[idx], bag.labels)
            outputs = model(sub)
            for name, t in outputs.items():
                sums[name] = sums.get(name, 0.0) + t.data.astype(np.float64)
    return {name: total / n_rounds for name, total in sums.items()}


# -- bag container format --------------------------------------------------


def write_bag(path, bag: Bag) -> None:
    """Binary tile-bag container, little-endian; see read_bag."""
    emb = np.ascontiguousarray(bag.embeddings, dtype="<f4")
    coords = np.ascontiguousarray(bag.coords, dtype="<i4")
    with open(path, "wb") as f:
        f.write(BAG_MAGIC)
        f.write(struct.pack("<I", BAG_VERSION))
        sid = bag.slide_id.encode("utf-8")
        f.write(struct.pack("<H", len(sid)))
        f.write(sid)
        f.write(struct.pack("<II", emb.shape[1], emb.shape[0]))
        f.write(coords.tobytes())
        f.write(emb.tobytes())


def read_bag(path) -> Bag:
    with open(path, "rb") as f:
        if f.read(4) != BAG_MAGIC:
            raise ValueError(f"read_bag: bad magic in {path}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != BAG_VERSION:
            raise ValueError(f"read_bag: unsupported version {version}")
        (sid_len,) = struct.unpack("<H", f.read(2))
        slide_id = f.read(sid_len).decode("utf-8")
        embed_dim, n_tiles = struct.unpack("<II", f.read(8))
        coords = np.frombuffer(f.read(n_tiles * 2 * 4), dtype="<i4").reshape(n_tiles, 2)
        emb = np.frombuffer(f.read(n_tiles * embed_dim * 4), dtype="<f4")
        if emb.size != n_tiles * embed_dim:
            raise ValueError(f"read_bag: truncated file {path}")
        emb = emb.reshape(n_tiles, embed_dim)
    return Bag(slide_id, emb.copy(), coords.astype(np.int32), {})


def read_manifest(path, tasks: list[TaskSpec]) -> dict[str, dict]:
    """TSV manifest: slide_id, bag_path, then one column per task.

    Empty cells mean the label is missing for that slide.  Returns
    {slide_id: {"path": ..., "labels": {...}}}.
    """
    out = {}
    with open(path) as f:
        header = f.readline().rstrip("\n").split("\t")
        if header[:2] != ["slide_id", "bag_path"]:
            raise ValueError(f"read_manifest: header must start with slide_id, bag_path, got {header[:2]}")
        task_cols = header[2:]
        by_name = {t.name: t for t in tasks}
        unknown = [c for c in task_cols if c not in by_name]
        if unknown:
            raise ValueError(f"read_manifest: unknown task columns {unknown}")
        for line in f:
            if not line.strip():
                continue
            cells = line.rstrip("\n").split("\t")
            sid, path_cell = cells[0], cells[1]
            labels = {}
            for col, cell in zip(task_cols, cells[2:]):
                if cell == "":
                    continue
                task = by_name[col]
                labels[col] = int(cell) if task.kind == "classification" else float(cell)
            out[sid] = {"path": path_cell, "labels": labels}
    return out


def write_manifest(path, tasks: list[TaskSpec], records: dict[str, dict]) -> None:
    with open(path, "w") as f:
        f.write("\t".join(["slide_id", "bag_path"] + [t.name for t in tasks]) + "\n")
        for sid in sorted(records):
            rec = records[sid]
            cells = [sid, str(rec["path"])]
            for t in tasks:
                v = rec["labels"].get(t.name)
                cells.append("" if v is None else str(v))
            f.write("\t".join(cells) + "\n")

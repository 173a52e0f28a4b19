"""Training loops for masked pretraining and supervised fine-tuning.

Both loops are deterministic functions of their config seed: shuffling,
masking and mixup all draw from one generator created at entry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .augment import mixup, to_onehot
from .backbone import Encoder
from .metrics import metrics_report
from .ops import cross_entropy, softmax
from .optim import AdamW, WarmupCosine, clip_grad_norm
from .pretrain import PretrainModel, make_mask, masked_recon_loss, patchify, stack_masks
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 100
    batch_size: int = 64
    base_lr: float = 5e-5
    weight_decay: float = 0.05
    warmup_epochs: int = 10
    min_lr_factor: float = 0.01
    mask_ratio: float = 0.75
    clip_norm: float | None = 5.0
    seed: int = 0


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 100
    batch_size: int = 8
    base_lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_epochs: int = 10
    min_lr_factor: float = 0.01
    mixup_alpha: float = 0.2
    clip_norm: float | None = 5.0
    seed: int = 0
    max_steps: int | None = None
    eval_every: int | None = None


class MetricsLog:
    """Line-delimited JSON metrics writer."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")


def _schedule(cfg, steps_per_epoch: int) -> WarmupCosine:
    total = cfg.epochs * steps_per_epoch
    warmup = min(cfg.warmup_epochs * steps_per_epoch, total)
    return WarmupCosine(cfg.base_lr, cfg.base_lr * cfg.min_lr_factor, warmup, total)


def pretrain_run(model: PretrainModel, images: np.ndarray, cfg: PretrainConfig,
                 log: MetricsLog | None = None) -> list[float]:
    """Masked-reconstruction training; returns per-epoch mean losses."""
    n = images.shape[0]
    if n == 0:
        raise ValueError("pretrain_run: empty image set")
    grid = model.encoder.cfg.grid_size
    patch = model.encoder.cfg.patch_size
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    sched = _schedule(cfg, steps_per_epoch)
    opt = AdamW(list(model.named_params()), cfg.base_lr,
                weight_decay=cfg.weight_decay)
    model.train()
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            batch = images[order[lo:lo + cfg.batch_size]]
            specs = [make_mask((grid, grid), cfg.mask_ratio, rng)
                     for _ in range(batch.shape[0])]
            mask = stack_masks(specs)
            preds = model.predict(Tensor(batch), mask)
            loss = masked_recon_loss(preds, patchify(batch, patch), mask)
            opt.zero_grad()
            loss.backward()
            if cfg.clip_norm is not None:
                clip_grad_norm([p for _, p in opt.named_params], cfg.clip_norm)
            opt.step(lr=sched.lr_at(step))
            losses.append(loss.item())
            step += 1
        epoch_loss = float(np.mean(losses))
        history.append(epoch_loss)
        if log:
            log.write({"phase": "pretrain", "epoch": epoch, "loss": epoch_loss,
                       "lr": sched.lr_at(step - 1)})
    return history


def evaluate(model: Encoder, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 64) -> dict[str, float]:
    """Accuracy / macro-F1 / AUC (percent) plus mean CE loss."""
    model.eval()
    logits = []
    with no_grad():
        for lo in range(0, images.shape[0], batch_size):
            logits.append(model.classify(Tensor(images[lo:lo + batch_size])).data)
    logits = np.concatenate(logits, axis=0)
    probs = softmax(logits.astype(np.float64))
    report = metrics_report(labels, probs)
    logp = np.log(np.maximum(probs[np.arange(labels.size), labels], 1e-12))
    report["loss"] = float(-logp.mean())
    model.train()
    return report


def finetune_run(model: Encoder, train_images: np.ndarray, train_labels: np.ndarray,
                 cfg: FinetuneConfig, eval_images: np.ndarray | None = None,
                 eval_labels: np.ndarray | None = None,
                 log: MetricsLog | None = None) -> dict:
    """Supervised training with mixup; optionally evaluates every few steps.

    Returns {"train_loss": per-epoch means, "evals": [(step, metrics)]}.
    """
    n = train_images.shape[0]
    num_classes = model.cfg.num_classes
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    sched = _schedule(cfg, steps_per_epoch)
    opt = AdamW(list(model.named_params()), cfg.base_lr,
                weight_decay=cfg.weight_decay)
    onehot = to_onehot(train_labels, num_classes)
    model.train()
    history: dict = {"train_loss": [], "evals": []}
    step = 0
    done = False
    for epoch in range(cfg.epochs):
        if done:
            break
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            bx, by = train_images[idx], onehot[idx]
            if cfg.mixup_alpha > 0 and bx.shape[0] > 1:
                bx, by, _, _ = mixup(bx, by, cfg.mixup_alpha, rng)
            loss = cross_entropy(model.classify(Tensor(bx)),
                                 by.astype(np.float64))
            opt.zero_grad()
            loss.backward()
            if cfg.clip_norm is not None:
                clip_grad_norm([p for _, p in opt.named_params], cfg.clip_norm)
            opt.step(lr=sched.lr_at(step))
            losses.append(loss.item())
            step += 1
            if (cfg.eval_every and eval_images is not None
                    and step % cfg.eval_every == 0):
                report = evaluate(model, eval_images, eval_labels)
                history["evals"].append((step, report))
                if log:
                    log.write({"phase": "finetune", "step": step, **report})
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        if losses:
            epoch_loss = float(np.mean(losses))
            history["train_loss"].append(epoch_loss)
            if log:
                log.write({"phase": "finetune", "epoch": epoch, "loss": epoch_loss})
    return history


def steps_to_threshold(history: dict, key: str, threshold: float) -> int | None:
    """First eval step at which metric >= threshold, else None."""
    for step, report in history["evals"]:
        if report[key] >= threshold:
            return step
    return None

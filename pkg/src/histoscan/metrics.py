"""Classification metrics, reported as percentages in [0, 100]."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def accuracy(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"accuracy: shapes {y_true.shape} vs {y_pred.shape}")
    return 100.0 * float((y_true == y_pred).mean())


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> float:
    """Unweighted mean of per-class F1; empty-denominator classes score 0."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    f1s = []
    for k in range(num_classes):
        tp = float(((y_pred == k) & (y_true == k)).sum())
        fp = float(((y_pred == k) & (y_true != k)).sum())
        fn = float(((y_pred != k) & (y_true == k)).sum())
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return 100.0 * float(np.mean(f1s))


def binary_auc(y_true: np.ndarray, scores: np.ndarray) -> float:
    """Rank-based AUC in [0, 1]; ties count half a win.

    Equals the exhaustive pairwise comparison count exactly (both are a
    half-integer numerator over P*N).
    """
    y_true = np.asarray(y_true).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(y_true.sum())
    n_neg = int((~y_true).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("binary_auc: need both classes present in y_true")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[y_true].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_ovr(y_true: np.ndarray, probs: np.ndarray) -> float:
    """One-vs-rest macro AUC as a percentage.

    Classes absent from y_true are skipped; a single-class y_true makes
    the metric undefined and raises.
    """
    y_true = np.asarray(y_true)
    probs = np.asarray(probs)
    if probs.ndim != 2 or probs.shape[0] != y_true.shape[0]:
        raise ValueError(f"auc_ovr: probs shape {probs.shape} for {y_true.shape[0]} labels")
    if np.unique(y_true).size < 2:
        raise ValueError("auc_ovr: AUC undefined for single-class y_true")
    aucs = []
    for k in range(probs.shape[1]):
        pos = y_true == k
        if pos.any() and (~pos).any():
            aucs.append(binary_auc(pos, probs[:, k]))
    return 100.0 * float(np.mean(aucs))


def metrics_report(y_true: np.ndarray, probs: np.ndarray) -> dict[str, float]:
    y_pred = np.argmax(probs, axis=1)
    return {
        "accuracy": accuracy(y_true, y_pred),
        "macro_f1": macro_f1(y_true, y_pred, probs.shape[1]),
        "auc": auc_ovr(y_true, probs),
    }

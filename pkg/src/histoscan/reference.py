"""Slow, independent reference implementations used by the self-check suite.

Written with plain element loops on purpose: these must share no code
with the kernel backends they are used to validate.
"""

from __future__ import annotations

import math

import numpy as np


def scan_reference(u: np.ndarray, delta: np.ndarray, A: np.ndarray,
                   Bseq: np.ndarray, Cseq: np.ndarray) -> np.ndarray:
    """Literal step-by-step recurrence, float64, one element at a time."""
    L, D = u.shape
    N = A.shape[0]
    h = [[0.0] * N for _ in range(D)]
    y = np.zeros((L, D), dtype=np.float64)
    for t in range(L):
        for c in range(D):
            dt = float(delta[t, c])
            acc = 0.0
            for n in range(N):
                decay = math.exp(-dt * float(A[n]))
                h[c][n] = decay * h[c][n] + dt * float(Bseq[t, n]) * float(u[t, c])
                acc += h[c][n] * float(Cseq[t, n])
            y[t, c] = acc
    return y


def pairwise_auc_reference(y_true: np.ndarray, scores: np.ndarray) -> float:
    """O(P*N) comparison count for the binary AUC (ties count half)."""
    pos = scores[y_true == 1]
    neg = scores[y_true == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("pairwise_auc_reference: need both classes present")
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (pos.size * neg.size)

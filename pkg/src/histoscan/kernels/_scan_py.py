"""Pure numpy fallback for the selective-scan recurrence kernels.

Matches the compiled extension's contract: one hidden state of shape
(channels, state) per batch element, updated sequentially over time with
per-token decay exp(-delta * A) and per-token input/readout projections.
"""

import numpy as np

BACKEND = "python"


def scan_forward(u, delta, A, Bseq, Cseq, want_hidden):
    """Run the recurrence forward.

    u, delta: (B, L, D); A: (N,); Bseq, Cseq: (B, L, N).
    Returns (y, H) with y: (B, L, D) and H: (B, L, D, N) hidden-state
    history (None when want_hidden is False).
    """
    Bn, L, D = u.shape
    N = A.shape[0]
    y = np.empty_like(u)
    H = np.empty((Bn, L, D, N), dtype=u.dtype) if want_hidden else None
    h = np.zeros((Bn, D, N), dtype=u.dtype)
    A_row = A[None, None, :]
    for t in range(L):
        dt = delta[:, t, :, None]                       # (B, D, 1)
        decay = np.exp(-dt * A_row)                     # (B, D, N)
        drive = (dt * u[:, t, :, None]) * Bseq[:, t, None, :]
        h = decay * h + drive
        y[:, t, :] = np.einsum("bdn,bn->bd", h, Cseq[:, t, :])
        if want_hidden:
            H[:, t] = h
    return y, H


def scan_backward(u, delta, A, Bseq, Cseq, H, gy):
    """Backpropagate through the recurrence.

    H is the hidden-state history saved by the forward pass.  Returns
    gradients (gu, gdelta, gA, gB, gC) matching the input shapes.
    """
    Bn, L, D = u.shape
    N = A.shape[0]
    gu = np.zeros_like(u)
    gdelta = np.zeros_like(delta)
    gA = np.zeros_like(A)
    gB = np.zeros_like(Bseq)
    gC = np.zeros_like(Cseq)
    G = np.zeros((Bn, D, N), dtype=u.dtype)             # dL/dh_t
    A_row = A[None, None, :]
    for t in range(L - 1, -1, -1):
        G += gy[:, t, :, None] * Cseq[:, t, None, :]
        gC[:, t, :] = np.einsum("bd,bdn->bn", gy[:, t, :], H[:, t])
        dt = delta[:, t, :, None]
        decay = np.exp(-dt * A_row)
        h_prev = H[:, t - 1] if t > 0 else np.zeros((Bn, D, N), dtype=u.dtype)
        g_decay = G * h_prev
        gdelta[:, t, :] = -np.einsum("bdn,n->bd", g_decay * decay, A)
        gA -= np.einsum("bdn,bd->n", g_decay * decay, delta[:, t, :])
        # drive term: h += (delta * u) outer B
        gdelta[:, t, :] += np.einsum("bdn,bn->bd", G, Bseq[:, t, :]) * u[:, t, :]
        gu[:, t, :] = np.einsum("bdn,bn->bd", G, Bseq[:, t, :]) * delta[:, t, :]
        gB[:, t, :] = np.einsum("bdn,bd->bn", G, delta[:, t, :] * u[:, t, :])
        G *= decay
    return gu, gdelta, gA, gB, gC

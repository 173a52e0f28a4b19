"""Neural-net primitives on top of the tensor engine.

All spatial ops are channel-last.  1-D ops accept (L, C) or (B, L, C);
2-D ops accept (H, W, C) or (B, H, W, C).  Centered convolutions require
odd kernel sizes and pad with zeros by k//2 per side; the causal conv
pads k-1 on the left only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from . import kernels
from .tensor import Tensor, _accum, _as_tensor, _make, _same_dtype, mean_

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


# -- activations -----------------------------------------------------------


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.maximum(x.data, 0)

    def backward(g):
        _accum(x, g * (x.data > 0))

    return _make("relu", out_data, (x,), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form is stable for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def silu(x) -> Tensor:
    x = _as_tensor(x)
    sig = _sigmoid(x.data)
    out_data = x.data * sig

    def backward(g):
        _accum(x, g * (sig * (1.0 + x.data * (1.0 - sig))))

    return _make("silu", out_data, (x,), backward)


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        _accum(x, (g * (cdf + x.data * pdf)).astype(x.dtype, copy=False))

    return _make("gelu", out_data.astype(x.dtype, copy=False), (x,), backward)


def softplus(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.logaddexp(x.data.dtype.type(0), x.data)

    def backward(g):
        _accum(x, g * _sigmoid(x.data))

    return _make("softplus", out_data, (x,), backward)


# -- linear / convolutions ---------------------------------------------------


def linear(x, w, b=None) -> Tensor:
    """y = x @ w + b with x: (..., Cin), w: (Cin, Cout), b: (Cout,)."""
    x, w = _as_tensor(x), _as_tensor(w)
    _same_dtype("linear", x, w)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    out_data = x.data @ w.data
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        out_data = out_data + b.data
        parents.append(b)

    def backward(g):
        _accum(x, g @ w.data.T)
        xf = x.data.reshape(-1, x.shape[-1])
        gf = g.reshape(-1, w.shape[1])
        _accum(w, xf.T @ gf)
        if b is not None:
            _accum(b, gf.sum(axis=0))

    return _make("linear", out_data, parents, backward)


def _pad_axis(a: np.ndarray, axis: int, before: int, after: int) -> np.ndarray:
    pads = [(0, 0)] * a.ndim
    pads[axis] = (before, after)
    return np.pad(a, pads)


def conv1d_causal(x, w) -> Tensor:
    """Depthwise causal conv: y[t, c] = sum_i w[c, i] * x[t-i, c].

    Output at t never sees inputs later than t.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    _same_dtype("conv1d_causal", x, w)
    C, k = w.shape
    if x.shape[-1] != C:
        raise ValueError(f"conv1d_causal: channels {x.shape[-1]} != kernel channels {C}")
    L = x.shape[-2]
    xp = _pad_axis(x.data, x.ndim - 2, k - 1, 0)
    out_data = np.zeros_like(x.data)
    for i in range(k):
        off = k - 1 - i
        out_data += w.data[:, i] * xp[..., off:off + L, :]

    def backward(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                off = k - 1 - i
                gxp[..., off:off + L, :] += g * w.data[:, i]
            _accum(x, gxp[..., k - 1:k - 1 + L, :])
        if w.requires_grad:
            gw = np.empty_like(w.data)
            red = tuple(range(g.ndim - 1))
            for i in range(k):
                off = k - 1 - i
                gw[:, i] = (g * xp[..., off:off + L, :]).sum(axis=red)
            _accum(w, gw)

    return _make("conv1d_causal", out_data, (x, w), backward)


def conv1d_depthwise(x, w) -> Tensor:
    """Depthwise centered conv: y[t, c] = sum_i w[c, i] * x[t+i-k//2, c]."""
    x, w = _as_tensor(x), _as_tensor(w)
    _same_dtype("conv1d_depthwise", x, w)
    C, k = w.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d_depthwise: kernel size {k} must be odd")
    if x.shape[-1] != C:
        raise ValueError(f"conv1d_depthwise: channels {x.shape[-1]} != kernel channels {C}")
    L = x.shape[-2]
    p = k // 2
    xp = _pad_axis(x.data, x.ndim - 2, p, p)
    out_data = np.zeros_like(x.data)
    for i in range(k):
        out_data += w.data[:, i] * xp[..., i:i + L, :]

    def backward(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                gxp[..., i:i + L, :] += g * w.data[:, i]
            _accum(x, gxp[..., p:p + L, :])
        if w.requires_grad:
            gw = np.empty_like(w.data)
            red = tuple(range(g.ndim - 1))
            for i in range(k):
                gw[:, i] = (g * xp[..., i:i + L, :]).sum(axis=red)
            _accum(w, gw)

    return _make("conv1d_depthwise", out_data, (x, w), backward)


def conv1d(x, w, b=None) -> Tensor:
    """Full centered 1-D conv: x (..., L, Cin), w (k, Cin, Cout)."""
    x, w = _as_tensor(x), _as_tensor(w)
    _same_dtype("conv1d", x, w)
    k, Cin, Cout = w.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d: kernel size {k} must be odd")
    if x.shape[-1] != Cin:
        raise ValueError(f"conv1d: channels {x.shape[-1]} != kernel input channels {Cin}")
    L = x.shape[-2]
    p = k // 2
    xp = _pad_axis(x.data, x.ndim - 2, p, p)
    out_data = np.zeros(x.shape[:-1] + (Cout,), dtype=x.dtype)
    for i in range(k):
        out_data += xp[..., i:i + L, :] @ w.data[i]
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        out_data += b.data
        parents.append(b)

    def backward(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                gxp[..., i:i + L, :] += g @ w.data[i].T
            _accum(x, gxp[..., p:p + L, :])
        if w.requires_grad:
            gw = np.empty_like(w.data)
            gf = g.reshape(-1, Cout)
            for i in range(k):
                gw[i] = xp[..., i:i + L, :].reshape(-1, Cin).T @ gf
            _accum(w, gw)
        if b is not None:
            _accum(b, g.reshape(-1, Cout).sum(axis=0))

    return _make("conv1d", out_data, parents, backward)


def conv2d_depthwise(x, w) -> Tensor:
    """Depthwise centered 2-D conv: x (..., H, W, C), w (C, k, k)."""
    x, w = _as_tensor(x), _as_tensor(w)
    _same_dtype("conv2d_depthwise", x, w)
    C, kh, kw = w.shape
    if kh % 2 == 0 or kh != kw:
        raise ValueError(f"conv2d_depthwise: kernel {kh}x{kw} must be square and odd")
    if x.shape[-1] != C:
        raise ValueError(f"conv2d_depthwise: channels {x.shape[-1]} != kernel channels {C}")
    H, W = x.shape[-3], x.shape[-2]
    p = kh // 2
    xp = _pad_axis(_pad_axis(x.data, x.ndim - 3, p, p), x.ndim - 2, p, p)
    out_data = np.zeros_like(x.data)
    for i in range(kh):
        for j in range(kw):
            out_data += w.data[:, i, j] * xp[..., i:i + H, j:j + W, :]

    def backward(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[..., i:i + H, j:j + W, :] += g * w.data[:, i, j]
            _accum(x, gxp[..., p:p + H, p:p + W, :])
        if w.requires_grad:
            gw = np.empty_like(w.data)
            red = tuple(range(g.ndim - 1))
            for i in range(kh):
                for j in range(kw):
                    gw[:, i, j] = (g * xp[..., i:i + H, j:j + W, :]).sum(axis=red)
            _accum(w, gw)

    return _make("conv2d_depthwise", out_data, (x, w), backward)


def conv2d(x, w, b=None) -> Tensor:
    """Full centered 2-D conv: x (..., H, W, Cin), w (k, k, Cin, Cout)."""
    x, w = _as_tensor(x), _as_tensor(w)
    _same_dtype("conv2d", x, w)
    kh, kw, Cin, Cout = w.shape
    if kh % 2 == 0 or kh != kw:
        raise ValueError(f"conv2d: kernel {kh}x{kw} must be square and odd")
    if x.shape[-1] != Cin:
        raise ValueError(f"conv2d: channels {x.shape[-1]} != kernel input channels {Cin}")
    H, W = x.shape[-3], x.shape[-2]
    p = kh // 2
    xp = _pad_axis(_pad_axis(x.data, x.ndim - 3, p, p), x.ndim - 2, p, p)
    out_data = np.zeros(x.shape[:-1] + (Cout,), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out_data += xp[..., i:i + H, j:j + W, :] @ w.data[i, j]
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        out_data += b.data
        parents.append(b)

    def backward(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[..., i:i + H, j:j + W, :] += g @ w.data[i, j].T
            _accum(x, gxp[..., p:p + H, p:p + W, :])
        if w.requires_grad:
            gw = np.empty_like(w.data)
            gf = g.reshape(-1, Cout)
            for i in range(kh):
                for j in range(kw):
                    gw[i, j] = xp[..., i:i + H, j:j + W, :].reshape(-1, Cin).T @ gf
            _accum(w, gw)
        if b is not None:
            _accum(b, g.reshape(-1, Cout).sum(axis=0))

    return _make("conv2d", out_data, parents, backward)


# -- normalisation -----------------------------------------------------------


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis, then apply a per-channel affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    _same_dtype("layer_norm", x, gamma, beta)
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} != ({C},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out_data = gamma.data * xhat + beta.data

    def backward(g):
        gxhat = g * gamma.data
        if x.requires_grad:
            m1 = gxhat.mean(axis=-1, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv_std * (gxhat - m1 - xhat * m2))
        red = tuple(range(g.ndim - 1))
        _accum(gamma, (g * xhat).sum(axis=red))
        _accum(beta, g.sum(axis=red))

    return _make("layer_norm", out_data, (x, gamma, beta), backward)


@dataclass
class BNState:
    """Running statistics for batch norm.  Kept in float64 for stability."""

    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def create(cls, channels: int) -> "BNState":
        return cls(np.zeros(channels, dtype=np.float64),
                   np.ones(channels, dtype=np.float64))


def batch_norm(x, gamma, beta, state: BNState, training: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Normalise over all axes except the last (channel) axis.

    Training mode uses batch statistics and updates the running estimates
    in place; eval mode is a fixed affine map using the running estimates.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    _same_dtype("batch_norm", x, gamma, beta)
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"batch_norm: affine shapes {gamma.shape}/{beta.shape} != ({C},)")
    red = tuple(range(x.ndim - 1))

    if training:
        mu = x.data.mean(axis=red)
        var = x.data.var(axis=red)
        state.running_mean += momentum * (mu.astype(np.float64) - state.running_mean)
        state.running_var += momentum * (var.astype(np.float64) - state.running_var)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv_std
        out_data = gamma.data * xhat + beta.data

        def backward(g):
            gxhat = g * gamma.data
            if x.requires_grad:
                m1 = gxhat.mean(axis=red, keepdims=True)
                m2 = (gxhat * xhat).mean(axis=red, keepdims=True)
                _accum(x, inv_std * (gxhat - m1 - xhat * m2))
            _accum(gamma, (g * xhat).sum(axis=red))
            _accum(beta, g.sum(axis=red))

        return _make("batch_norm", out_data.astype(x.dtype, copy=False), (x, gamma, beta), backward)

    inv_std = (1.0 / np.sqrt(state.running_var + eps)).astype(x.dtype)
    rmean = state.running_mean.astype(x.dtype)
    xhat = (x.data - rmean) * inv_std
    out_data = gamma.data * xhat + beta.data

    def backward(g):
        _accum(x, g * (gamma.data * inv_std))
        _accum(gamma, (g * xhat).sum(axis=red))
        _accum(beta, g.sum(axis=red))

    return _make("batch_norm", out_data, (x, gamma, beta), backward)


# -- pooling / resampling ------------------------------------------------


def gap2d(x) -> Tensor:
    """Global average pool over the two spatial axes of (..., H, W, C)."""
    return mean_(x, axis=(-3, -2))


def gap1d(x) -> Tensor:
    """Global average pool over the sequence axis of (..., L, C)."""
    return mean_(x, axis=-2)


def subsample2d(x, stride: int) -> Tensor:
    """Keep every stride-th pixel along H and W (a strided 1x1 window)."""
    x = _as_tensor(x)
    s = int(stride)
    out_data = np.ascontiguousarray(x.data[..., ::s, ::s, :])

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[..., ::s, ::s, :] = g
            _accum(x, gx)

    return _make("subsample2d", out_data, (x,), backward)


def upsample_nearest2d(x, factor: int) -> Tensor:
    """Repeat each pixel factor x factor times along H and W."""
    x = _as_tensor(x)
    f = int(factor)
    out_data = np.repeat(np.repeat(x.data, f, axis=-3), f, axis=-2)

    def backward(g):
        if x.requires_grad:
            H, W = x.shape[-3], x.shape[-2]
            gr = g.reshape(g.shape[:-3] + (H, f, W, f, g.shape[-1]))
            _accum(x, gr.sum(axis=(-4, -2)))

    return _make("upsample_nearest2d", out_data, (x,), backward)


# -- selective scan ---------------------------------------------------------


def ssm_scan(u, delta, A, Bseq, Cseq) -> Tensor:
    """Selective state-space recurrence over the time axis.

    u, delta: (L, D) or (B, L, D); A: (N,) positive diagonal;
    Bseq, Cseq: (L, N) or (B, L, N).  Per token: the state decays by
    exp(-delta * A), integrates delta * B_t * u_t, and is read out
    through C_t.  Dispatches to the compiled kernel when available.
    """
    u, delta, A = _as_tensor(u), _as_tensor(delta), _as_tensor(A)
    Bseq, Cseq = _as_tensor(Bseq), _as_tensor(Cseq)
    _same_dtype("ssm_scan", u, delta, A, Bseq, Cseq)
    if A.ndim != 1:
        raise ValueError(f"ssm_scan: A must be 1-D, got shape {A.shape}")
    squeeze = u.ndim == 2
    if u.ndim not in (2, 3):
        raise ValueError(f"ssm_scan: input must be rank 2 or 3, got {u.shape}")
    if delta.shape != u.shape:
        raise ValueError(f"ssm_scan: delta shape {delta.shape} != input shape {u.shape}")
    N = A.shape[0]
    want_bc = u.shape[:-1] + (N,)
    if Bseq.shape != want_bc or Cseq.shape != want_bc:
        raise ValueError(f"ssm_scan: B/C shapes {Bseq.shape}/{Cseq.shape} != {want_bc}")

    def batched(a: np.ndarray) -> np.ndarray:
        a = np.ascontiguousarray(a)
        return a[None] if squeeze else a

    ub, db = batched(u.data), batched(delta.data)
    Bb, Cb = batched(Bseq.data), batched(Cseq.data)
    Ac = np.ascontiguousarray(A.data)
    from .tensor import grad_enabled
    want_hidden = grad_enabled() and any(
        t.requires_grad for t in (u, delta, A, Bseq, Cseq))
    y, H = kernels.scan_forward(ub, db, Ac, Bb, Cb, want_hidden)
    out_data = y[0] if squeeze else y

    def backward(g):
        gb = np.ascontiguousarray(g[None] if squeeze else g)
        gu, gdelta, gA, gB, gC = kernels.scan_backward(ub, db, Ac, Bb, Cb, H, gb)
        if squeeze:
            gu, gdelta, gB, gC = gu[0], gdelta[0], gB[0], gC[0]
        _accum(u, gu)
        _accum(delta, gdelta)
        _accum(A, gA)
        _accum(Bseq, gB)
        _accum(Cseq, gC)

    return _make("ssm_scan", out_data, (u, delta, A, Bseq, Cseq), backward)


# -- losses ------------------------------------------------------------


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain numpy softmax (stable); used for metrics and prediction."""
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits, target) -> Tensor:
    """Mean cross-entropy with integer labels or soft target rows.

    logits: (B, K).  target: int array (B,) or float array (B, K) of
    mixture weights (rows summing to 1).
    """
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy: logits must be (B, K), got {logits.shape}")
    B, K = logits.shape
    t = np.asarray(target)
    if t.ndim == 1:
        if t.shape[0] != B:
            raise ValueError(f"cross_entropy: {t.shape[0]} labels for {B} rows")
        if t.min() < 0 or t.max() >= K:
            raise ValueError(f"cross_entropy: label outside [0, {K})")
        y = np.zeros((B, K), dtype=logits.dtype)
        y[np.arange(B), t.astype(np.int64)] = 1
    elif t.shape == (B, K):
        y = t.astype(logits.dtype)
    else:
        raise ValueError(f"cross_entropy: target shape {t.shape} incompatible with {logits.shape}")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -(y * logp).sum(axis=1).mean()

    def backward(g):
        p = np.exp(logp)
        _accum(logits, (p - y) * (g / B))

    return _make("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def mean_abs_error(pred, target) -> Tensor:
    """Mean absolute error against a constant target array."""
    pred = _as_tensor(pred)
    t = np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ValueError(f"mean_abs_error: target shape {t.shape} != pred shape {pred.shape}")
    diff = pred.data - t
    loss = np.abs(diff).mean()

    def backward(g):
        _accum(pred, np.sign(diff) * (g / diff.size))

    return _make("mean_abs_error", np.asarray(loss, dtype=pred.dtype), (pred,), backward)

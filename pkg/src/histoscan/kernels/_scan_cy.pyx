# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled selective-scan recurrence kernels.

Same contract as the numpy fallback; the sequential time loop is the one
piece of the model that cannot be vectorised, so it lives here.
"""

import numpy as np

from libc.math cimport exp, expf

ctypedef fused real:
    float
    double

BACKEND = "cython"


cdef inline real _exp(real x) noexcept nogil:
    if real is float:
        return expf(x)
    else:
        return exp(x)


def scan_forward(real[:, :, ::1] u, real[:, :, ::1] delta, real[::1] A,
                 real[:, :, ::1] Bseq, real[:, :, ::1] Cseq, bint want_hidden):
    cdef Py_ssize_t Bn = u.shape[0], L = u.shape[1], D = u.shape[2], N = A.shape[0]
    cdef Py_ssize_t b, t, c, n
    cdef real dt, uc, hv, dec, acc

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    y_arr = np.empty((Bn, L, D), dtype=dtype)
    H_arr = np.empty((Bn, L, D, N), dtype=dtype) if want_hidden else np.empty((1, 1, 1, 1), dtype=dtype)
    h_arr = np.zeros((Bn, D, N), dtype=dtype)

    cdef real[:, :, ::1] y = y_arr
    cdef real[:, :, :, ::1] H = H_arr
    cdef real[:, :, ::1] h = h_arr

    with nogil:
        for b in range(Bn):
            for t in range(L):
                for c in range(D):
                    dt = delta[b, t, c]
                    uc = u[b, t, c]
                    acc = 0
                    for n in range(N):
                        dec = _exp(-dt * A[n])
                        hv = dec * h[b, c, n] + dt * uc * Bseq[b, t, n]
                        h[b, c, n] = hv
                        acc = acc + hv * Cseq[b, t, n]
                        if want_hidden:
                            H[b, t, c, n] = hv
                    y[b, t, c] = acc
    return y_arr, (H_arr if want_hidden else None)


def scan_backward(real[:, :, ::1] u, real[:, :, ::1] delta, real[::1] A,
                  real[:, :, ::1] Bseq, real[:, :, ::1] Cseq,
                  real[:, :, :, ::1] H, real[:, :, ::1] gy):
    cdef Py_ssize_t Bn = u.shape[0], L = u.shape[1], D = u.shape[2], N = A.shape[0]
    cdef Py_ssize_t b, t, c, n
    cdef real dt, uc, gyv, dec, g, gd_acc, gu_acc, gb, h_prev, g_decay

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    gu_arr = np.zeros((Bn, L, D), dtype=dtype)
    gdelta_arr = np.zeros((Bn, L, D), dtype=dtype)
    gA_arr = np.zeros((N,), dtype=dtype)
    gB_arr = np.zeros((Bn, L, N), dtype=dtype)
    gC_arr = np.zeros((Bn, L, N), dtype=dtype)
    G_arr = np.zeros((Bn, D, N), dtype=dtype)

    cdef real[:, :, ::1] gu = gu_arr
    cdef real[:, :, ::1] gdelta = gdelta_arr
    cdef real[::1] gA = gA_arr
    cdef real[:, :, ::1] gB = gB_arr
    cdef real[:, :, ::1] gC = gC_arr
    cdef real[:, :, ::1] G = G_arr

    with nogil:
        for b in range(Bn):
            for t in range(L - 1, -1, -1):
                for c in range(D):
                    dt = delta[b, t, c]
                    uc = u[b, t, c]
                    gyv = gy[b, t, c]
                    gd_acc = 0
                    gu_acc = 0
                    for n in range(N):
                        g = G[b, c, n] + gyv * Cseq[b, t, n]
                        gC[b, t, n] += gyv * H[b, t, c, n]
                        dec = _exp(-dt * A[n])
                        h_prev = H[b, t - 1, c, n] if t > 0 else 0
                        g_decay = g * h_prev * dec
                        gd_acc = gd_acc - g_decay * A[n] + g * Bseq[b, t, n] * uc
                        gA[n] = gA[n] - g_decay * dt
                        gu_acc = gu_acc + g * Bseq[b, t, n] * dt
                        gB[b, t, n] += g * dt * uc
                        G[b, c, n] = g * dec
                    gdelta[b, t, c] = gd_acc
                    gu[b, t, c] = gu_acc
    return gu_arr, gdelta_arr, gA_arr, gB_arr, gC_arr

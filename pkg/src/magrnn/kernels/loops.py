"""Explicit-loop kernels, compiled with numba when it is available.

Every function here has a vectorized twin in ``vectorized.py`` with the
same signature. Array layouts:

* LSTM weights are gate-packed in the order (input, forget, cell, output):
  ``w_r`` is ``(4m,)``, ``w_h`` is ``(4m, m)``, ``b`` is ``(4m,)``.
* Sequences are time-major: ``inputs`` is ``(T, batch)``, hidden and cell
  trajectories are ``(T + 1, batch, m)`` with index 0 the initial state.
"""
import math

import numpy as np

from .._accel import njit


@njit
def sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@njit
def ou_paths(b0, dw, decay, amp):
    n_rec, n_inc = dw.shape
    out = np.empty((n_rec, n_inc + 1))
    for r in range(n_rec):
        b = b0[r]
        out[r, 0] = b
        for k in range(n_inc):
            b = b - decay * b + amp * dw[r, k]
            out[r, k + 1] = b
    return out


@njit
def measure(field, p0, shot, gain, kick):
    n_rec, n = field.shape
    out = np.empty((n_rec, n))
    for r in range(n_rec):
        p = p0[r]
        for k in range(n):
            out[r, k] = gain * p + shot[r, k]
            p = p - kick * field[r, k]
    return out


@njit
def kalman_rts_means(A, H, K, G, m0, signals):
    n_rec, n = signals.shape
    filt = np.empty((n_rec, n, 2))
    smooth = np.empty((n_rec, n, 2))
    innov = np.empty((n_rec, n))
    for r in range(n_rec):
        a0 = m0[0]
        a1 = m0[1]
        for k in range(n):
            e = signals[r, k] - (H[0] * a0 + H[1] * a1)
            innov[r, k] = e
            f0 = a0 + K[k, 0] * e
            f1 = a1 + K[k, 1] * e
            filt[r, k, 0] = f0
            filt[r, k, 1] = f1
            a0 = A[0, 0] * f0 + A[0, 1] * f1
            a1 = A[1, 0] * f0 + A[1, 1] * f1
        smooth[r, n - 1, 0] = filt[r, n - 1, 0]
        smooth[r, n - 1, 1] = filt[r, n - 1, 1]
        for k in range(n - 2, -1, -1):
            f0 = filt[r, k, 0]
            f1 = filt[r, k, 1]
            d0 = smooth[r, k + 1, 0] - (A[0, 0] * f0 + A[0, 1] * f1)
            d1 = smooth[r, k + 1, 1] - (A[1, 0] * f0 + A[1, 1] * f1)
            smooth[r, k, 0] = f0 + G[k, 0, 0] * d0 + G[k, 0, 1] * d1
            smooth[r, k, 1] = f1 + G[k, 1, 0] * d0 + G[k, 1, 1] * d1
    return filt, smooth, innov


@njit
def _cell(w_r, w_hT, b, r, h, c, gates, h_out, c_out):
    # w_hT is the (m, 4m) transpose so the inner loop is a contiguous axpy
    m = h.shape[0]
    for j in range(4 * m):
        gates[j] = w_r[j] * r + b[j]
    for q in range(m):
        hq = h[q]
        for j in range(4 * m):
            gates[j] += w_hT[q, j] * hq
    for j in range(4 * m):
        if 2 * m <= j < 3 * m:
            gates[j] = math.tanh(gates[j])
        else:
            gates[j] = sigmoid(gates[j])
    for j in range(m):
        cj = gates[m + j] * c[j] + gates[j] * gates[2 * m + j]
        c_out[j] = cj
        h_out[j] = gates[3 * m + j] * math.tanh(cj)


@njit
def lstm_forward(w_r, w_h, b, inputs, h0, c0):
    n_t, n_b = inputs.shape
    m = h0.shape[1]
    H = np.empty((n_t + 1, n_b, m))
    C = np.empty((n_t + 1, n_b, m))
    gates = np.empty((n_t, n_b, 4 * m))
    H[0] = h0
    C[0] = c0
    w_hT = np.ascontiguousarray(w_h.T)
    for i in range(n_b):
        for t in range(n_t):
            _cell(w_r, w_hT, b, inputs[t, i], H[t, i], C[t, i], gates[t, i], H[t + 1, i], C[t + 1, i])
    return H, C, gates


@njit
def lstm_backward(w_r, w_h, inputs, H, C, gates, dH, dh_last, dc_last):
    n_t, n_b = inputs.shape
    m = H.shape[2]
    dw_r = np.zeros(4 * m)
    dw_h = np.zeros((4 * m, m))
    db = np.zeros(4 * m)
    dh0 = np.empty((n_b, m))
    dc0 = np.empty((n_b, m))
    dh = np.empty(m)
    dc = np.empty(m)
    da = np.empty(4 * m)
    for i in range(n_b):
        for j in range(m):
            dh[j] = dh_last[i, j]
            dc[j] = dc_last[i, j]
        for t in range(n_t - 1, -1, -1):
            g = gates[t, i]
            r = inputs[t, i]
            for j in range(m):
                dhj = dh[j] + dH[t, i, j]
                tc = math.tanh(C[t + 1, i, j])
                o = g[3 * m + j]
                dcj = dc[j] + dhj * o * (1.0 - tc * tc)
                ig = g[j]
                fg = g[m + j]
                cg = g[2 * m + j]
                da[j] = dcj * cg * ig * (1.0 - ig)
                da[m + j] = dcj * C[t, i, j] * fg * (1.0 - fg)
                da[2 * m + j] = dcj * ig * (1.0 - cg * cg)
                da[3 * m + j] = dhj * tc * o * (1.0 - o)
                dc[j] = dcj * fg
            for q in range(m):
                dh[q] = 0.0
            for j in range(4 * m):
                dj = da[j]
                dw_r[j] += dj * r
                db[j] += dj
                for q in range(m):
                    dw_h[j, q] += dj * H[t, i, q]
                    dh[q] += dj * w_h[j, q]
        for j in range(m):
            dh0[i, j] = dh[j]
            dc0[i, j] = dc[j]
    return dw_r, dw_h, db, dh0, dc0


@njit
def decode_feedback(w_r, w_h, b, w_out, b_out, h0, c0, n):
    n_b, m = h0.shape
    out = np.empty((n_b, n))
    gates = np.empty(4 * m)
    h = np.empty(m)
    c = np.empty(m)
    h2 = np.empty(m)
    c2 = np.empty(m)
    w_hT = np.ascontiguousarray(w_h.T)
    for i in range(n_b):
        h[:] = h0[i]
        c[:] = c0[i]
        r = 0.0
        for t in range(n):
            _cell(w_r, w_hT, b, r, h, c, gates, h2, c2)
            y = b_out
            for q in range(m):
                y += w_out[q] * h2[q]
            out[i, t] = y
            r = y
            h[:] = h2
            c[:] = c2
    return out

"""Pure-numpy twins of the kernels in ``loops.py``.

Loops run over time only; records and batch elements are vectorized.
"""
import numpy as np


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    z = np.exp(x[~pos])
    out[~pos] = z / (1.0 + z)
    return out


def ou_paths(b0, dw, decay, amp):
    n_rec, n_inc = dw.shape
    out = np.empty((n_rec, n_inc + 1))
    b = np.array(b0, dtype=np.float64)
    out[:, 0] = b
    for k in range(n_inc):
        b = b - decay * b + amp * dw[:, k]
        out[:, k + 1] = b
    return out


def measure(field, p0, shot, gain, kick):
    n_rec, n = field.shape
    out = np.empty((n_rec, n))
    p = np.array(p0, dtype=np.float64)
    for k in range(n):
        out[:, k] = gain * p + shot[:, k]
        p = p - kick * field[:, k]
    return out


def kalman_rts_means(A, H, K, G, m0, signals):
    n_rec, n = signals.shape
    filt = np.empty((n_rec, n, 2))
    smooth = np.empty((n_rec, n, 2))
    innov = np.empty((n_rec, n))
    pred = np.broadcast_to(np.asarray(m0, dtype=np.float64), (n_rec, 2))
    for k in range(n):
        e = signals[:, k] - pred @ H
        innov[:, k] = e
        filt[:, k] = pred + e[:, None] * K[k]
        pred = filt[:, k] @ A.T
    smooth[:, n - 1] = filt[:, n - 1]
    for k in range(n - 2, -1, -1):
        d = smooth[:, k + 1] - filt[:, k] @ A.T
        smooth[:, k] = filt[:, k] + d @ G[k].T
    return filt, smooth, innov


def _gate_activations(a, m):
    g = sigmoid(a)
    g[:, 2 * m:3 * m] = np.tanh(a[:, 2 * m:3 * m])
    return g


def lstm_forward(w_r, w_h, b, inputs, h0, c0):
    n_t, n_b = inputs.shape
    m = h0.shape[1]
    H = np.empty((n_t + 1, n_b, m))
    C = np.empty((n_t + 1, n_b, m))
    gates = np.empty((n_t, n_b, 4 * m))
    H[0] = h0
    C[0] = c0
    for t in range(n_t):
        a = inputs[t][:, None] * w_r + H[t] @ w_h.T + b
        g = _gate_activations(a, m)
        gates[t] = g
        C[t + 1] = g[:, m:2 * m] * C[t] + g[:, :m] * g[:, 2 * m:3 * m]
        H[t + 1] = g[:, 3 * m:] * np.tanh(C[t + 1])
    return H, C, gates


def lstm_backward(w_r, w_h, inputs, H, C, gates, dH, dh_last, dc_last):
    n_t, n_b = inputs.shape
    m = H.shape[2]
    dw_r = np.zeros(4 * m)
    dw_h = np.zeros((4 * m, m))
    db = np.zeros(4 * m)
    dh = np.array(dh_last, dtype=np.float64)
    dc = np.array(dc_last, dtype=np.float64)
    da = np.empty((n_b, 4 * m))
    for t in range(n_t - 1, -1, -1):
        g = gates[t]
        ig, fg, cg, og = g[:, :m], g[:, m:2 * m], g[:, 2 * m:3 * m], g[:, 3 * m:]
        dh = dh + dH[t]
        tc = np.tanh(C[t + 1])
        dc = dc + dh * og * (1.0 - tc * tc)
        da[:, :m] = dc * cg * ig * (1.0 - ig)
        da[:, m:2 * m] = dc * C[t] * fg * (1.0 - fg)
        da[:, 2 * m:3 * m] = dc * ig * (1.0 - cg * cg)
        da[:, 3 * m:] = dh * tc * og * (1.0 - og)
        dc = dc * fg
        dw_r += inputs[t] @ da
        db += da.sum(axis=0)
        dw_h += da.T @ H[t]
        dh = da @ w_h
    return dw_r, dw_h, db, dh, dc


def decode_feedback(w_r, w_h, b, w_out, b_out, h0, c0, n):
    m = h0.shape[1]
    h = np.array(h0, dtype=np.float64)
    c = np.array(c0, dtype=np.float64)
    out = np.empty((h.shape[0], n))
    r = np.zeros(h.shape[0])
    for t in range(n):
        a = r[:, None] * w_r + h @ w_h.T + b
        g = _gate_activations(a, m)
        c = g[:, m:2 * m] * c + g[:, :m] * g[:, 2 * m:3 * m]
        h = g[:, 3 * m:] * np.tanh(c)
        r = h @ w_out + b_out
        out[:, t] = r
    return out

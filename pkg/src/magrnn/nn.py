"""Encoder-decoder LSTM with hand-written reverse-mode gradients.

One LSTM layer reads the measured signal; its final ``(h, c)`` seeds a second
LSTM that emits the field one step at a time through a single linear output
unit. During training the decoder input at step ``k >= 1`` is the true field
at ``k - 1`` (teacher forcing); at inference it is the previous prediction.
The first decoder input is always 0.

All parameters live in one flat float64 vector so the optimizer and the
checkpoint writer can treat the model as a single array. Its layout follows
the checkpoint block order: for encoder then decoder, the four input weight
vectors (input, forget, cell, output gates), the four ``m x m`` recurrent
matrices in the same gate order, the four bias vectors; then ``W_out`` and
``b_out``.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import vectorized as _vec

__all__ = [
    "LstmParams",
    "LstmState",
    "Seq2SeqModel",
    "Gradients",
    "ForwardCache",
    "CheckpointError",
    "sigmoid",
    "lstm_step",
    "dense_out",
    "encode",
    "decode_teacher",
    "decode_autoregressive",
    "forward_loss",
    "backward",
    "init_model",
    "zero_model",
    "save_checkpoint",
    "load_checkpoint",
]

GATES = ("i", "f", "c", "o")
_CKPT_HEAD = struct.Struct("<4sIII")
CKPT_MAGIC = b"MGNN"
CKPT_VERSION = 1


def sigmoid(x):
    """Logistic function in the overflow-free two-branch form."""
    if np.ndim(x) == 0:
        x = float(x)
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        z = math.exp(x)
        return z / (1.0 + z)
    return _vec.sigmoid(x)


def lstm_size(m: int) -> int:
    return 4 * m + 4 * m * m + 4 * m


def model_size(m: int) -> int:
    return 2 * lstm_size(m) + m + 1


class LstmParams:
    """Views into a gate-packed block of the flat parameter vector.

    ``w_r`` has shape ``(4m,)``, ``w_h`` ``(4m, m)`` and ``b`` ``(4m,)``;
    rows ``g*m:(g+1)*m`` belong to gate ``GATES[g]``. Named accessors such
    as ``W_hf`` or ``b_o`` return the per-gate slices.
    """

    def __init__(self, block: np.ndarray, m: int):
        if block.shape != (lstm_size(m),):
            raise ValueError(f"LSTM block needs {lstm_size(m)} entries, got {block.shape}")
        self.m = m
        self.w_r = block[: 4 * m]
        self.w_h = block[4 * m: 4 * m + 4 * m * m].reshape(4 * m, m)
        self.b = block[4 * m + 4 * m * m:]

    def _gate(self, arr, name):
        g = GATES.index(name)
        return arr[g * self.m:(g + 1) * self.m]

    def __getattr__(self, name):
        if len(name) == 4 and name[:3] in ("W_r", "W_h") and name[3] in GATES:
            arr = self.w_r if name[2] == "r" else self.w_h
            return self._gate(arr, name[3])
        if len(name) == 3 and name[:2] == "b_" and name[2] in GATES:
            return self._gate(self.b, name[2])
        raise AttributeError(name)


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


class Seq2SeqModel:
    """Encoder LSTM, decoder LSTM and the dense output unit."""

    def __init__(self, m: int, theta: np.ndarray | None = None, input_mean: float = 0.0, input_std: float = 1.0):
        self.m = int(m)
        # affine standardization of the encoder input; identity unless training enabled it
        self.input_mean = float(input_mean)
        self.input_std = float(input_std)
        if theta is None:
            theta = np.zeros(model_size(self.m))
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (model_size(self.m),):
            raise ValueError(f"hidden size {m} needs {model_size(self.m)} parameters, got {theta.shape}")
        self.theta = theta
        n = lstm_size(self.m)
        self.encoder = LstmParams(theta[:n], self.m)
        self.decoder = LstmParams(theta[n:2 * n], self.m)
        self.W_out = theta[2 * n:2 * n + self.m]

    @property
    def b_out(self) -> float:
        return float(self.theta[-1])

    @b_out.setter
    def b_out(self, value):
        self.theta[-1] = value

    def copy(self) -> "Seq2SeqModel":
        return Seq2SeqModel(self.m, self.theta.copy(), self.input_mean, self.input_std)

    def scale_inputs(self, x: np.ndarray) -> np.ndarray:
        if self.input_mean == 0.0 and self.input_std == 1.0:
            return x
        return (x - self.input_mean) / self.input_std

    def checksum(self) -> str:
        return hashlib.sha256(self.theta.astype("<f8").tobytes()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Seq2SeqModel):
            return NotImplemented
        return (
            self.m == other.m
            and self.theta.tobytes() == other.theta.tobytes()
            and (self.input_mean, self.input_std) == (other.input_mean, other.input_std)
        )


# Gradients share the model's layout.
Gradients = Seq2SeqModel


def zero_model(m: int, b_out: float = 0.0) -> Seq2SeqModel:
    model = Seq2SeqModel(m)
    model.b_out = b_out
    return model


def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    return q.T if rows < cols else q


def init_model(m: int, rng: np.random.Generator) -> Seq2SeqModel:
    """Keras-style defaults: Glorot-uniform input kernels, orthogonal
    recurrent kernels, zero biases except forget-gate bias 1, Glorot-uniform
    output kernel.
    """
    model = Seq2SeqModel(m)
    for lstm in (model.encoder, model.decoder):
        lim = math.sqrt(6.0 / (1 + 4 * m))
        lstm.w_r[:] = rng.uniform(-lim, lim, 4 * m)
        # recurrent kernel is (m, 4m) with orthonormal rows, stored transposed
        lstm.w_h[:] = _orthogonal(rng, m, 4 * m).T
        lstm.b[:] = 0.0
        lstm.b_f[:] = 1.0
    lim = math.sqrt(6.0 / (m + 1))
    model.W_out[:] = rng.uniform(-lim, lim, m)
    model.b_out = 0.0
    return model


def lstm_step(p: LstmParams, r: float, s: LstmState) -> LstmState:
    h, c = np.asarray(s.h, dtype=np.float64), np.asarray(s.c, dtype=np.float64)
    m = p.m
    a = p.w_r * r + p.w_h @ h + p.b
    i, f, o = sigmoid(a[:m]), sigmoid(a[m:2 * m]), sigmoid(a[3 * m:])
    c_new = f * c + i * np.tanh(a[2 * m:3 * m])
    return LstmState(o * np.tanh(c_new), c_new)


def dense_out(model: Seq2SeqModel, h) -> float:
    return float(model.W_out @ np.asarray(h, dtype=np.float64) + model.b_out)


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def encode(model: Seq2SeqModel, signal, state: LstmState | None = None) -> LstmState:
    """Final encoder state after reading ``signal`` (one record or a batch)."""
    x = _as_batch(signal)
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite values")
    nb, m = x.shape[0], model.m
    h0 = np.zeros((nb, m)) if state is None else np.broadcast_to(_as_batch(state.h), (nb, m)).copy()
    c0 = np.zeros((nb, m)) if state is None else np.broadcast_to(_as_batch(state.c), (nb, m)).copy()
    enc = model.encoder
    H, C, _ = kernels.lstm_forward(enc.w_r, enc.w_h, enc.b, np.ascontiguousarray(model.scale_inputs(x).T), h0, c0)
    if np.ndim(signal) == 1:
        return LstmState(H[-1, 0].copy(), C[-1, 0].copy())
    return LstmState(H[-1].copy(), C[-1].copy())


def _teacher_inputs(b_true: np.ndarray) -> np.ndarray:
    # (T, batch): 0 first, then the targets shifted by one step
    inp = np.zeros((b_true.shape[1], b_true.shape[0]))
    inp[1:] = b_true[:, :-1].T
    return inp


def decode_teacher(model: Seq2SeqModel, init: LstmState, b_true) -> np.ndarray:
    b = _as_batch(b_true)
    h0, c0 = _as_batch(init.h), _as_batch(init.c)
    if h0.shape[0] != b.shape[0]:
        raise ValueError(f"{h0.shape[0]} initial states for {b.shape[0]} target sequences")
    dec = model.decoder
    H, _, _ = kernels.lstm_forward(dec.w_r, dec.w_h, dec.b, _teacher_inputs(b), h0.copy(), c0.copy())
    out = H[1:] @ model.W_out + model.b_out
    out = np.ascontiguousarray(out.T)
    return out[0] if np.ndim(b_true) == 1 else out


def decode_autoregressive(model: Seq2SeqModel, init: LstmState, n: int) -> np.ndarray:
    h0, c0 = _as_batch(init.h), _as_batch(init.c)
    dec = model.decoder
    out = kernels.decode_feedback(
        dec.w_r, dec.w_h, dec.b, model.W_out, model.b_out,
        np.ascontiguousarray(h0), np.ascontiguousarray(c0), int(n),
    )
    return out[0] if np.ndim(init.h) == 1 else out


@dataclass
class ForwardCache:
    x_in: np.ndarray
    enc: tuple
    dec_in: np.ndarray
    dec: tuple
    pred: np.ndarray
    resid: np.ndarray
    scale: float


def forward_loss(model: Seq2SeqModel, signals, b_true) -> tuple[float, ForwardCache]:
    """Teacher-forced mean squared error over a mini-batch.

    ``loss = sum((B_true - B_est)**2) / (M * N_T)``.
    """
    x = _as_batch(signals)
    b = _as_batch(b_true)
    if x.shape != b.shape or x.shape[0] == 0:
        raise ValueError(f"batch shapes {x.shape} and {b.shape} must match and be non-empty")
    nb, n = x.shape
    m = model.m
    enc, dec = model.encoder, model.decoder
    x_in = np.ascontiguousarray(model.scale_inputs(x).T)
    He, Ce, Ge = kernels.lstm_forward(enc.w_r, enc.w_h, enc.b, x_in, np.zeros((nb, m)), np.zeros((nb, m)))
    dec_in = _teacher_inputs(b)
    Hd, Cd, Gd = kernels.lstm_forward(dec.w_r, dec.w_h, dec.b, dec_in, He[-1].copy(), Ce[-1].copy())
    pred = Hd[1:] @ model.W_out + model.b_out
    resid = pred - b.T
    scale = 1.0 / (nb * n)
    loss = float(np.sum(resid * resid) * scale)
    cache = ForwardCache(x_in, (He, Ce, Ge), dec_in, (Hd, Cd, Gd), pred, resid, scale)
    return loss, cache


def backward(model: Seq2SeqModel, cache: ForwardCache) -> Gradients:
    """Exact gradient of :func:`forward_loss` with respect to every parameter."""
    m = model.m
    grads = Seq2SeqModel(m)
    g_pred = 2.0 * cache.scale * cache.resid  # (T, batch)
    Hd, Cd, Gd = cache.dec
    grads.W_out[:] = np.einsum("tb,tbj->j", g_pred, Hd[1:])
    grads.b_out = float(g_pred.sum())
    dH = g_pred[:, :, None] * model.W_out
    nb = g_pred.shape[1]
    dec = model.decoder
    dw_r, dw_h, db, dh0, dc0 = kernels.lstm_backward(
        dec.w_r, dec.w_h, cache.dec_in, Hd, Cd, Gd, np.ascontiguousarray(dH),
        np.zeros((nb, m)), np.zeros((nb, m)),
    )
    grads.decoder.w_r[:] = dw_r
    grads.decoder.w_h[:] = dw_h
    grads.decoder.b[:] = db
    He, Ce, Ge = cache.enc
    enc = model.encoder
    n_t = cache.x_in.shape[0]
    dw_r, dw_h, db, _, _ = kernels.lstm_backward(
        enc.w_r, enc.w_h, cache.x_in, He, Ce, Ge, np.zeros((n_t, nb, m)), dh0, dc0,
    )
    grads.encoder.w_r[:] = dw_r
    grads.encoder.w_h[:] = dw_h
    grads.encoder.b[:] = db
    return grads


class CheckpointError(Exception):
    """Unreadable or inconsistent model checkpoint."""


def save_checkpoint(model: Seq2SeqModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, model.m, 1))
        fh.write(model.theta.astype("<f8").tobytes())


def load_checkpoint(path) -> Seq2SeqModel:
    with open(path, "rb") as fh:
        head = fh.read(_CKPT_HEAD.size)
        if len(head) < _CKPT_HEAD.size:
            raise CheckpointError("checkpoint header truncated")
        magic, version, m, input_dim = _CKPT_HEAD.unpack(head)
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        if version != CKPT_VERSION or input_dim != 1:
            raise CheckpointError(f"unsupported checkpoint (version {version}, input_dim {input_dim})")
        need = model_size(m) * 8
        body = fh.read(need)
    if len(body) < need:
        raise CheckpointError(f"checkpoint payload has {len(body)} bytes, expected {need}")
    return Seq2SeqModel(m, np.frombuffer(body, dtype="<f8").astype(np.float64))

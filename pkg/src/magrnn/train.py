"""Mini-batch ADAM training with teacher forcing, autoregressive prediction
and time-resolved error evaluation.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .gauss import MID_WINDOW, _mid_mask, error_summary
from .sim import Dataset

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainReport",
    "TrainingDiverged",
    "ErrorCurve",
    "adam_step",
    "train",
    "predict",
    "evaluate_error_curve",
    "autoregressive_loss",
    "teacher_vs_autoregressive_gap",
    "epoch_permutation",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and architecture settings.

    Defaults are the desk-scale run; :meth:`full` gives the full-scale one.
    ``lr_decay_every``/``lr_decay_factor`` implement an optional step decay
    that is off by default.
    """

    eta: float = 0.01
    batch_size: int = 64
    epochs: int = 20
    m: int = 32
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    normalize_inputs: bool = False
    clip_norm: float | None = None
    lr_decay_every: int | None = None
    lr_decay_factor: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("ADAM betas must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1 or self.m < 1:
            raise ValueError("batch_size, epochs and m must be >= 1")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive when set")

    @classmethod
    def full(cls, **kw) -> "TrainConfig":
        return cls(**{"batch_size": 256, "epochs": 30, "m": 80, **kw})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def learning_rate(self, epoch: int) -> float:
        if not self.lr_decay_every:
            return self.eta
        return self.eta * self.lr_decay_factor ** (epoch // self.lr_decay_every)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(model: nn.Seq2SeqModel, grads: nn.Gradients, state: AdamState, eta: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected ADAM update; returns ``(new_model, new_state)``."""
    g = grads.theta
    if g.shape != model.theta.shape or state.m.shape != g.shape:
        raise ValueError("model, gradient and optimizer state shapes differ")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new = model.copy()
    new.theta -= eta * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainReport:
    epoch_losses: list[float]
    wall_time: float
    checksum: str
    batches_per_epoch: int = 0
    config: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"])
            for e, loss in enumerate(self.epoch_losses, start=1):
                w.writerow([e, repr(float(loss))])


def _rng(seed: int, *tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *tag])))


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return _rng(seed, 1, epoch).permutation(n)


def train(dataset: Dataset, cfg: TrainConfig, model: nn.Seq2SeqModel | None = None, progress=None):
    """Teacher-forced training; one ADAM step per mini-batch of ``cfg.batch_size`` records.

    Records are reshuffled each epoch with a permutation derived from
    ``(cfg.seed, epoch)``. A trailing short batch is averaged over its own
    size. ``progress`` is called as ``progress(epoch, loss)`` after every
    epoch. Raises :class:`TrainingDiverged` on a non-finite batch loss.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("empty training set")
    if model is None:
        model = nn.init_model(cfg.m, _rng(cfg.seed, 0))
    else:
        model = model.copy()
    if cfg.normalize_inputs:
        std = float(dataset.signals.std())
        model.input_mean = float(dataset.signals.mean())
        model.input_std = std if std > 0 else 1.0
    state = AdamState.zeros(model.theta.size)
    signals, fields = dataset.signals, dataset.fields
    losses = []
    t0 = time.perf_counter()
    n_batches = math.ceil(n / cfg.batch_size)
    for epoch in range(cfg.epochs):
        perm = epoch_permutation(cfg.seed, epoch, n)
        eta = cfg.learning_rate(epoch)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, cache = nn.forward_loss(model, signals[idx], fields[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch + 1}, batch {start // cfg.batch_size + 1}"
                )
            grads = nn.backward(model, cache)
            if cfg.clip_norm is not None:
                norm = float(np.linalg.norm(grads.theta))
                if norm > cfg.clip_norm:
                    grads.theta *= cfg.clip_norm / norm
            model, state = adam_step(model, grads, state, eta, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            total += loss * len(idx)
        losses.append(total / n)
        log.info("epoch %d/%d loss %.6g", epoch + 1, cfg.epochs, losses[-1])
        if progress is not None:
            progress(epoch + 1, losses[-1])
    report = TrainReport(losses, time.perf_counter() - t0, model.checksum(), n_batches, cfg.to_dict())
    return model, report


def _chunked(fn, n: int, chunk: int, workers: int):
    bounds = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: fn(*b), bounds))
    else:
        parts = [fn(*b) for b in bounds]
    return np.concatenate(parts)


def predict(model: nn.Seq2SeqModel, signal, workers: int = 1, chunk: int = 1024) -> np.ndarray:
    """Autoregressive field estimate for one signal or a ``(records, n)`` batch."""
    x = np.asarray(signal, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)

    def run(a, b):
        return nn.decode_autoregressive(model, nn.encode(model, x[a:b]), x.shape[1])

    out = _chunked(run, x.shape[0], chunk, workers)
    return out[0] if single else out


def _teacher_predictions(model, signals, fields, workers=1, chunk=1024):
    def run(a, b):
        return nn.decode_teacher(model, nn.encode(model, signals[a:b]), fields[a:b])
    return _chunked(run, signals.shape[0], chunk, workers)


@dataclass(frozen=True)
class ErrorCurve:
    times: np.ndarray
    error: np.ndarray
    error_normalized: np.ndarray
    summary: dict
    mid_per_record: np.ndarray
    estimates: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "error", "error_normalized"])
            for row in zip(self.times, self.error, self.error_normalized):
                w.writerow([repr(float(v)) for v in row])


def error_curve_from_estimates(test: Dataset, estimates: np.ndarray) -> ErrorCurve:
    est = np.asarray(estimates, dtype=np.float64)
    if est.shape != test.fields.shape:
        raise ValueError(f"estimates have shape {est.shape}, test fields {test.fields.shape}")
    sq = (test.fields - est) ** 2
    err = sq.mean(axis=0)
    p = test.params
    return ErrorCurve(
        p.times, err, err / p.stationary_variance, error_summary(p, err),
        sq[:, _mid_mask(p, MID_WINDOW)].mean(axis=1), est,
    )


def evaluate_error_curve(model: nn.Seq2SeqModel, test: Dataset, workers: int = 1) -> ErrorCurve:
    """Per-time mean squared error of the autoregressive prediction over ``test``."""
    if len(test) == 0:
        raise ValueError("empty test set")
    return error_curve_from_estimates(test, predict(model, test.signals, workers=workers))


def autoregressive_loss(model: nn.Seq2SeqModel, signals, b_true) -> float:
    """The training loss with autoregressive instead of teacher-forced decoding."""
    est = predict(model, signals)
    r = np.atleast_2d(est) - np.atleast_2d(b_true)
    return float(np.sum(r * r) / r.size)


def teacher_vs_autoregressive_gap(model: nn.Seq2SeqModel, test: Dataset, workers: int = 1) -> tuple[float, float]:
    tf = _teacher_predictions(model, test.signals, test.fields, workers)
    ar = predict(model, test.signals, workers=workers)
    return float(np.mean((tf - test.fields) ** 2)), float(np.mean((ar - test.fields) ** 2))


def write_trajectories_csv(test: Dataset, estimates: np.ndarray, path, n: int = 4) -> None:
    t = test.params.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["record_id", "t", "B_true", "B_est"])
        for i in range(min(n, len(test))):
            for k in range(len(t)):
                w.writerow([i, repr(float(t[k])), repr(float(test.fields[i, k])), repr(float(estimates[i, k]))])

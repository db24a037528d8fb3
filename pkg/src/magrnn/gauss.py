"""Kalman filter and Rauch-Tung-Striebel smoother for the (p, B) state.

The state-space model is the exact linear-Gaussian description of the
simulator in :mod:`magrnn.sim`::

    z_{k+1} = A z_k + w_k,   A = [[1, -mu*tau], [0, 1 - gamma_b*tau]],  Q = diag(0, sigma_b*tau)
    x_k     = H z_k + v_k,   H = [kappa*sqrt(tau), 0],                   R = 1/2

with prior ``z_0 ~ N(0, diag(1/2, sigma_b/(2 gamma_b)))``. Each step first
updates on ``x_k`` and then predicts ``z_{k+1}``, mirroring the simulator's
measure-then-kick order.

Covariances do not depend on the data, so the filter computes them once per
record length and runs the mean recursions for many records in one kernel
call.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .sim import Dataset, PhysicsParams

__all__ = [
    "GaussianBelief",
    "StateSpaceModel",
    "FilterResult",
    "SmootherResult",
    "BaselineCurve",
    "build_model",
    "kalman_filter",
    "rts_smoother",
    "filter_smooth_batch",
    "joint_prior",
    "condition_gaussian",
    "joint_gaussian_oracle",
    "baseline_error_curve",
    "error_summary",
    "MID_WINDOW",
]

MID_WINDOW = (0.2, 0.8)
ORACLE_MAX_STEPS = 64


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class StateSpaceModel:
    transition: np.ndarray
    process_noise: np.ndarray
    observation: np.ndarray
    obs_noise: float
    prior: GaussianBelief

    def __post_init__(self):
        if not self.obs_noise > 0:
            raise ValueError("observation noise must be positive")


def build_model(params: PhysicsParams) -> StateSpaceModel:
    tau = params.tau
    A = np.array([[1.0, -params.mu * tau], [0.0, 1.0 - params.gamma_b * tau]])
    Q = np.diag([0.0, params.sigma_b * tau])
    H = np.array([params.kappa * math.sqrt(tau), 0.0])
    prior = GaussianBelief(np.zeros(2), np.diag([0.5, params.stationary_variance]))
    return StateSpaceModel(A, Q, H, 0.5, prior)


@dataclass(frozen=True)
class FilterResult:
    """Filtered moments for a batch of records.

    ``means`` is ``(records, n, 2)``; ``covs`` is ``(n, 2, 2)`` and shared by
    every record. ``pred_means``/``pred_covs`` are the one-step predictions
    that each measurement updated, ``innovations`` is ``(records, n)`` and
    ``innovation_var`` is ``(n,)``.
    """

    means: np.ndarray
    covs: np.ndarray
    pred_covs: np.ndarray
    gains: np.ndarray
    innovations: np.ndarray
    innovation_var: np.ndarray

    def beliefs(self, record: int = 0) -> list[GaussianBelief]:
        return [GaussianBelief(self.means[record, k], self.covs[k]) for k in range(self.covs.shape[0])]


@dataclass(frozen=True)
class SmootherResult:
    means: np.ndarray
    covs: np.ndarray
    used_pinv: bool = False

    def beliefs(self, record: int = 0) -> list[GaussianBelief]:
        return [GaussianBelief(self.means[record, k], self.covs[k]) for k in range(self.covs.shape[0])]


def _covariance_pass(model: StateSpaceModel, n: int):
    A, Q, H, R = model.transition, model.process_noise, model.observation, model.obs_noise
    P = model.prior.cov.copy()
    pred = np.empty((n, 2, 2))
    filt = np.empty((n, 2, 2))
    gains = np.empty((n, 2))
    svar = np.empty(n)
    eye = np.eye(2)
    for k in range(n):
        pred[k] = P
        S = H @ P @ H + R
        K = P @ H / S
        IKH = eye - np.outer(K, H)
        # Joseph form keeps P symmetric PSD under round-off
        P = IKH @ P @ IKH.T + R * np.outer(K, K)
        P = 0.5 * (P + P.T)
        filt[k] = P
        gains[k] = K
        svar[k] = S
        P = A @ P @ A.T + Q
    return pred, filt, gains, svar


def _smoother_gains(model: StateSpaceModel, filt_covs, pred_covs):
    A = model.transition
    n = filt_covs.shape[0]
    G = np.empty((max(n - 1, 0), 2, 2))
    sm = np.empty_like(filt_covs)
    sm[n - 1] = filt_covs[n - 1]
    used_pinv = False
    for k in range(n - 2, -1, -1):
        Pp = pred_covs[k + 1]
        cross = filt_covs[k] @ A.T
        if np.linalg.cond(Pp) < 1e12:
            G[k] = np.linalg.solve(Pp.T, cross.T).T
        else:
            G[k] = cross @ np.linalg.pinv(Pp)
            used_pinv = True
        P = filt_covs[k] + G[k] @ (sm[k + 1] - Pp) @ G[k].T
        sm[k] = 0.5 * (P + P.T)
    return G, sm, used_pinv


def _as_signals(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError("signal must have at least one sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite values")
    return np.ascontiguousarray(x)


def filter_smooth_batch(model: StateSpaceModel, signals):
    """Filter and smooth every row of ``signals``; returns ``(FilterResult, SmootherResult)``."""
    x = _as_signals(signals)
    n = x.shape[1]
    pred, filt, gains, svar = _covariance_pass(model, n)
    G, sm_covs, used_pinv = _smoother_gains(model, filt, pred)
    means, sm_means, innov = kernels.kalman_rts_means(
        model.transition, model.observation, gains, np.ascontiguousarray(G), model.prior.mean, x
    )
    if used_pinv:
        warnings.warn("singular predicted covariance; smoother used a pseudo-inverse", RuntimeWarning)
    fr = FilterResult(means, filt, pred, gains, innov, svar)
    return fr, SmootherResult(sm_means, sm_covs, used_pinv)


def kalman_filter(model: StateSpaceModel, signal) -> FilterResult:
    x = _as_signals(signal)
    pred, filt, gains, svar = _covariance_pass(model, x.shape[1])
    n = x.shape[1]
    G = np.zeros((max(n - 1, 0), 2, 2))
    means, _, innov = kernels.kalman_rts_means(model.transition, model.observation, gains, G, model.prior.mean, x)
    return FilterResult(means, filt, pred, gains, innov, svar)


def rts_smoother(model: StateSpaceModel, filtered: FilterResult) -> SmootherResult:
    """Backward pass over a complete :class:`FilterResult`."""
    A = model.transition
    G, sm_covs, used_pinv = _smoother_gains(model, filtered.covs, filtered.pred_covs)
    if used_pinv:
        warnings.warn("singular predicted covariance; smoother used a pseudo-inverse", RuntimeWarning)
    f = filtered.means
    sm = np.empty_like(f)
    n = f.shape[1]
    sm[:, n - 1] = f[:, n - 1]
    for k in range(n - 2, -1, -1):
        sm[:, k] = f[:, k] + (sm[:, k + 1] - f[:, k] @ A.T) @ G[k].T
    return SmootherResult(sm, sm_covs, used_pinv)


def joint_prior(model: StateSpaceModel, n: int):
    """Mean and covariance of ``(p_0..p_{n-1}, B_0..B_{n-1})`` before any measurement.

    Built from the marginal covariances and ``Cov(z_j, z_k) = A^(j-k) P_k``
    for ``j >= k``.
    """
    A, Q = model.transition, model.process_noise
    marg = [model.prior.cov]
    for _ in range(n - 1):
        marg.append(A @ marg[-1] @ A.T + Q)
    big = np.zeros((2 * n, 2 * n))
    for k in range(n):
        block = marg[k]
        for j in range(k, n):
            for a in range(2):
                for b in range(2):
                    big[a * n + j, b * n + k] = block[a, b]
                    big[b * n + k, a * n + j] = block[a, b]
            block = A @ block
    mean = np.concatenate([np.full(n, model.prior.mean[0]), np.full(n, model.prior.mean[1])])
    return mean, big


def condition_gaussian(mean, cov, obs_matrix, obs_var, y):
    """Condition ``N(mean, cov)`` on ``y = obs_matrix @ z + e``, ``e ~ N(0, diag(obs_var))``."""
    Hm = np.atleast_2d(np.asarray(obs_matrix, dtype=np.float64))
    if Hm.shape[0] == 0:
        return np.array(mean, dtype=np.float64), np.array(cov, dtype=np.float64)
    S = Hm @ cov @ Hm.T + np.diag(np.broadcast_to(obs_var, Hm.shape[:1]))
    cross = cov @ Hm.T
    resid = np.asarray(y, dtype=np.float64) - Hm @ mean
    post_mean = mean + cross @ np.linalg.solve(S, resid)
    post_cov = cov - cross @ np.linalg.solve(S, cross.T)
    return post_mean, 0.5 * (post_cov + post_cov.T)


def joint_gaussian_oracle(model: StateSpaceModel, signal, n_steps: int | None = None):
    """Exact posterior mean and variance of every ``B_k`` by dense conditioning.

    Conditions on the first ``len(signal)`` measurements of an ``n_steps``
    long record (default: as many steps as samples).
    """
    y = np.asarray(signal, dtype=np.float64).ravel()
    n = len(y) if n_steps is None else int(n_steps)
    if n > ORACLE_MAX_STEPS:
        raise ValueError(f"oracle is limited to {ORACLE_MAX_STEPS} steps, got {n}")
    if len(y) > n or n < 1:
        raise ValueError("more measurements than steps")
    mean, cov = joint_prior(model, n)
    Hm = np.zeros((len(y), 2 * n))
    for k in range(len(y)):
        Hm[k, k] = model.observation[0]
        Hm[k, n + k] = model.observation[1]
    post_mean, post_cov = condition_gaussian(mean, cov, Hm, model.obs_noise, y)
    return post_mean[n:], np.diag(post_cov)[n:].copy()


def _mid_mask(params: PhysicsParams, window=MID_WINDOW):
    t = params.times
    T = params.duration
    return (t >= window[0] * T - 1e-12) & (t <= window[1] * T + 1e-12)


def error_summary(params: PhysicsParams, curve: np.ndarray) -> dict:
    """Mid-interval mean, edge values and edge/middle ratios of an error curve."""
    mid = float(np.mean(curve[_mid_mask(params)]))
    return {
        "mid": mid,
        "edge_start": float(curve[0]),
        "edge_end": float(curve[-1]),
        "ratio_start": float(curve[0] / mid) if mid > 0 else math.inf,
        "ratio_end": float(curve[-1] / mid) if mid > 0 else math.inf,
    }


@dataclass(frozen=True)
class BaselineCurve:
    times: np.ndarray
    error_smoothed: np.ndarray
    error_filtered: np.ndarray
    summary_smoothed: dict
    summary_filtered: dict
    sq_err_smoothed_mid: np.ndarray  # per-record mid-interval mean squared error

    @property
    def mid_error(self) -> float:
        return self.summary_smoothed["mid"]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "error_smoothed", "error_filtered"])
            for row in zip(self.times, self.error_smoothed, self.error_filtered):
                w.writerow([repr(float(v)) for v in row])


def baseline_error_curve(params: PhysicsParams, dataset: Dataset, chunk: int = 8192) -> BaselineCurve:
    """Per-time mean squared error of the smoothed (and filtered) field estimate."""
    if dataset.params != params:
        raise ValueError("dataset header does not match the given physics parameters")
    model = build_model(params)
    n = params.n_steps
    se_s = np.zeros(n)
    se_f = np.zeros(n)
    mid_rec = np.empty(len(dataset))
    mask = _mid_mask(params)
    for start in range(0, len(dataset), chunk):
        sl = slice(start, min(start + chunk, len(dataset)))
        fr, sr = filter_smooth_batch(model, dataset.signals[sl])
        es = (dataset.fields[sl] - sr.means[:, :, 1]) ** 2
        ef = (dataset.fields[sl] - fr.means[:, :, 1]) ** 2
        se_s += es.sum(axis=0)
        se_f += ef.sum(axis=0)
        mid_rec[sl] = es[:, mask].mean(axis=1)
    es_curve = se_s / len(dataset)
    ef_curve = se_f / len(dataset)
    return BaselineCurve(
        params.times, es_curve, ef_curve,
        error_summary(params, es_curve), error_summary(params, ef_curve), mid_rec,
    )


def write_estimate_csv(params: PhysicsParams, b_true, smoothed: SmootherResult, path, record: int = 0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "B_true", "B_smoothed", "B_var_smoothed"])
        for k, t in enumerate(params.times):
            w.writerow([repr(float(t)), repr(float(b_true[k])), repr(float(smoothed.means[record, k, 1])),
                        repr(float(smoothed.covs[k, 1, 1]))])

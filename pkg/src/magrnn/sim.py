"""Simulation of fluctuating fields and the optical records they produce.

The field follows an Ornstein-Uhlenbeck process integrated by Euler-Maruyama
at the record resolution. The measured quadrature is a linear-Gaussian
readout of the atomic momentum-like variable ``p``, which integrates the
field: each step emits ``x_k = kappa*sqrt(tau)*p_k + v_k`` and then kicks
``p_{k+1} = p_k - mu*tau*B_k``. Projection noise enters through
``p_0 ~ N(0, 1/2)`` and shot noise through ``v_k ~ N(0, 1/2)``.

Units: field in pT, time in ms, signal dimensionless.
"""
from __future__ import annotations

import csv
import hashlib
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels

__all__ = [
    "PhysicsParams",
    "Record",
    "Dataset",
    "ParameterError",
    "DatasetError",
    "DatasetFormatError",
    "DatasetTruncatedError",
    "DEFAULT_PARAMS",
    "record_rng",
    "ou_path_from_increments",
    "sample_ou_path",
    "record_from_path",
    "simulate_record",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "export_record_csv",
]

MAGIC = b"MGSQ"
VERSION = 1
# u32 identifier stored in the file header for the per-record generator:
# numpy Philox4x64 keyed by SeedSequence([seed, record_index]).
RNG_PHILOX_SEEDSEQ = 1

_HEADER = struct.Struct("<4sIQIdddddQI")
SHOT_VARIANCE = 0.5
PROJECTION_VARIANCE = 0.5


class ParameterError(ValueError):
    """Physically or numerically invalid simulation parameters."""


class DatasetError(Exception):
    """Base class for dataset file problems."""


class DatasetFormatError(DatasetError):
    """Wrong magic bytes, unsupported version or unknown generator id."""


class DatasetTruncatedError(DatasetError):
    """Payload shorter than the header announces."""


@dataclass(frozen=True)
class PhysicsParams:
    """Inputs for one simulated record.

    ``kappa`` is given in ms^-1/2 (``kappa**2`` in ms^-1), ``mu`` in
    (pT ms)^-1, ``tau`` in ms, ``gamma_b`` in ms^-1 and ``sigma_b`` in
    pT^2/ms.
    """

    kappa: float = math.sqrt(18.0)
    mu: float = 90.0
    tau: float = 0.01
    n_steps: int = 101
    gamma_b: float = 1.0
    sigma_b: float = 2.0

    def __post_init__(self):
        vals = (self.kappa, self.mu, self.tau, self.gamma_b, self.sigma_b)
        if not all(math.isfinite(v) for v in vals):
            raise ParameterError("parameters must be finite")
        if self.tau <= 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ParameterError(f"n_steps must be an integer >= 2, got {self.n_steps}")
        if self.gamma_b <= 0:
            raise ParameterError(f"gamma_b must be positive, got {self.gamma_b}")
        if self.sigma_b < 0:
            raise ParameterError(f"sigma_b must be non-negative, got {self.sigma_b}")
        if self.gamma_b * self.tau >= 1.0:
            raise ParameterError(
                f"gamma_b*tau = {self.gamma_b * self.tau} >= 1 makes the Euler-Maruyama step unstable"
            )

    @property
    def duration(self) -> float:
        return (self.n_steps - 1) * self.tau

    @property
    def stationary_variance(self) -> float:
        return self.sigma_b / (2.0 * self.gamma_b)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.tau

    def replace(self, **changes) -> "PhysicsParams":
        kw = {**self.to_dict(), **changes}
        return PhysicsParams(**kw)

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "mu": self.mu,
            "tau": self.tau,
            "n_steps": int(self.n_steps),
            "gamma_b": self.gamma_b,
            "sigma_b": self.sigma_b,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicsParams":
        d = dict(d)
        if "kappa2" in d:
            d["kappa"] = math.sqrt(d.pop("kappa2"))
        return cls(**d)


DEFAULT_PARAMS = PhysicsParams()


@dataclass(frozen=True)
class Record:
    signal: np.ndarray
    field: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.signal, dtype=np.float64)
        f = np.asarray(self.field, dtype=np.float64)
        if s.ndim != 1 or s.shape != f.shape:
            raise ValueError(f"signal and field must be 1-D of equal length, got {s.shape} and {f.shape}")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(f))):
            raise ValueError("record contains non-finite values")
        object.__setattr__(self, "signal", s)
        object.__setattr__(self, "field", f)

    def __len__(self):
        return self.signal.shape[0]


@dataclass(frozen=True, eq=False)
class Dataset:
    """A batch of records stored as two ``(count, n_steps)`` arrays."""

    params: PhysicsParams
    signals: np.ndarray
    fields: np.ndarray
    seed: int = 0
    rng_id: int = RNG_PHILOX_SEEDSEQ

    def __post_init__(self):
        s = np.ascontiguousarray(self.signals, dtype=np.float64)
        f = np.ascontiguousarray(self.fields, dtype=np.float64)
        if s.ndim != 2 or s.shape != f.shape:
            raise ValueError(f"signals and fields must share a 2-D shape, got {s.shape} and {f.shape}")
        if s.shape[1] != self.params.n_steps:
            raise ValueError(f"records have length {s.shape[1]}, params say {self.params.n_steps}")
        s.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "signals", s)
        object.__setattr__(self, "fields", f)

    def __len__(self):
        return self.signals.shape[0]

    def __getitem__(self, i) -> Record:
        return Record(self.signals[i], self.fields[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def records(self) -> list[Record]:
        return list(self)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.params == other.params
            and self.seed == other.seed
            and self.rng_id == other.rng_id
            and self.signals.tobytes() == other.signals.tobytes()
            and self.fields.tobytes() == other.fields.tobytes()
        )

    def subset(self, idx) -> "Dataset":
        return Dataset(self.params, self.signals[idx], self.fields[idx], self.seed, self.rng_id)

    def header_bytes(self) -> bytes:
        p = self.params
        return _HEADER.pack(
            MAGIC, VERSION, len(self), p.n_steps, p.tau, p.kappa, p.mu,
            p.gamma_b, p.sigma_b, self.seed, self.rng_id,
        )

    def header_hash(self) -> str:
        return hashlib.sha256(self.header_bytes()).hexdigest()


def record_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for record ``index`` of a dataset seeded by ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def ou_path_from_increments(params: PhysicsParams, b0: float, increments) -> np.ndarray:
    """Euler-Maruyama field path for given Wiener increments (variance tau each)."""
    dw = np.asarray(increments, dtype=np.float64).reshape(1, -1)
    return kernels.ou_paths(
        np.array([float(b0)]), dw, params.gamma_b * params.tau, math.sqrt(params.sigma_b)
    )[0]


def sample_ou_path(params: PhysicsParams, rng: np.random.Generator, b0: float | None = None) -> np.ndarray:
    """Draw a field path of length ``n_steps`` with ``B_0`` from the stationary law."""
    if b0 is None:
        b0 = math.sqrt(params.stationary_variance) * rng.standard_normal()
    dw = math.sqrt(params.tau) * rng.standard_normal(params.n_steps - 1)
    return ou_path_from_increments(params, b0, dw)


def record_from_path(params: PhysicsParams, field, p0: float, shot=None) -> np.ndarray:
    """Deterministic signal for a field path, initial ``p`` and shot-noise sequence.

    ``shot=None`` means noiseless readout.
    """
    field = np.asarray(field, dtype=np.float64).reshape(1, -1)
    if shot is None:
        shot = np.zeros_like(field)
    shot = np.asarray(shot, dtype=np.float64).reshape(1, -1)
    gain = params.kappa * math.sqrt(params.tau)
    return kernels.measure(field, np.array([float(p0)]), shot, gain, params.mu * params.tau)[0]


def simulate_record(
    params: PhysicsParams,
    rng: np.random.Generator,
    *,
    p0: float | None = None,
    b0: float | None = None,
    shot_noise: bool = True,
) -> Record:
    """One (signal, field) pair. Keyword overrides exist for testing."""
    raw = rng.standard_normal(2 * params.n_steps + 1)
    sig, fld = _record_from_normals(params, raw[None, :])
    if p0 is None and b0 is None and shot_noise:
        return Record(sig[0], fld[0])
    n = params.n_steps
    p_init = math.sqrt(PROJECTION_VARIANCE) * raw[0] if p0 is None else p0
    b_init = math.sqrt(params.stationary_variance) * raw[1] if b0 is None else b0
    path = ou_path_from_increments(params, b_init, math.sqrt(params.tau) * raw[2:n + 1])
    shot = math.sqrt(SHOT_VARIANCE) * raw[n + 1:] if shot_noise else None
    return Record(record_from_path(params, path, p_init, shot), path)


def _record_from_normals(params: PhysicsParams, raw: np.ndarray):
    # raw[:, 0] -> p_0, raw[:, 1] -> B_0, raw[:, 2:n+1] -> dW, raw[:, n+1:] -> shot noise
    n = params.n_steps
    p0 = math.sqrt(PROJECTION_VARIANCE) * raw[:, 0]
    b0 = math.sqrt(params.stationary_variance) * raw[:, 1]
    dw = math.sqrt(params.tau) * raw[:, 2:n + 1]
    shot = math.sqrt(SHOT_VARIANCE) * raw[:, n + 1:]
    fields = kernels.ou_paths(b0, np.ascontiguousarray(dw), params.gamma_b * params.tau, math.sqrt(params.sigma_b))
    signals = kernels.measure(
        fields, p0, np.ascontiguousarray(shot), params.kappa * math.sqrt(params.tau), params.mu * params.tau
    )
    return signals, fields


def _generate_block(params: PhysicsParams, seed: int, start: int, stop: int):
    width = 2 * params.n_steps + 1
    raw = np.empty((stop - start, width))
    for j, i in enumerate(range(start, stop)):
        raw[j] = record_rng(seed, i).standard_normal(width)
    return _record_from_normals(params, raw)


def generate_dataset(params: PhysicsParams, count: int, seed: int, workers: int = 1, block: int = 4096) -> Dataset:
    """Simulate ``count`` records; record ``i`` depends only on ``(seed, i)``."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    bounds = [(s, min(s + block, count)) for s in range(0, count, block)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _generate_block(params, seed, *b), bounds))
    else:
        parts = [_generate_block(params, seed, *b) for b in bounds]
    signals = np.concatenate([p[0] for p in parts])
    fields = np.concatenate([p[1] for p in parts])
    return Dataset(params, signals, fields, int(seed))


def save_dataset(d: Dataset, path) -> None:
    payload = np.empty((len(d), 2, d.params.n_steps), dtype="<f8")
    payload[:, 0] = d.signals
    payload[:, 1] = d.fields
    with open(path, "wb") as fh:
        fh.write(d.header_bytes())
        fh.write(payload.tobytes())


def read_header(fh):
    head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise DatasetTruncatedError(f"header is {len(head)} bytes, expected {_HEADER.size}")
    magic, version, count, n_steps, tau, kappa, mu, gamma_b, sigma_b, seed, rng_id = _HEADER.unpack(head)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    if rng_id != RNG_PHILOX_SEEDSEQ:
        raise DatasetFormatError(f"unknown generator id {rng_id}")
    try:
        params = PhysicsParams(kappa=kappa, mu=mu, tau=tau, n_steps=n_steps, gamma_b=gamma_b, sigma_b=sigma_b)
    except ParameterError as exc:
        raise DatasetFormatError(f"header holds invalid parameters: {exc}") from exc
    return params, count, seed, rng_id


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        params, count, seed, rng_id = read_header(fh)
        need = count * 2 * params.n_steps * 8
        body = fh.read(need)
    if len(body) < need:
        raise DatasetTruncatedError(f"payload has {len(body)} bytes, header announces {need}")
    payload = np.frombuffer(body, dtype="<f8").reshape(count, 2, params.n_steps)
    return Dataset(params, payload[:, 0].astype(np.float64), payload[:, 1].astype(np.float64), seed, rng_id)


def export_record_csv(params: PhysicsParams, record: Record, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "signal", "field"])
        for t, s, f in zip(params.times, record.signal, record.field):
            w.writerow([repr(float(t)), repr(float(s)), repr(float(f))])


def dataset_path_summary(path) -> str:
    d = load_dataset(Path(path))
    p = d.params
    return (
        f"{path}: {len(d)} records, n_steps={p.n_steps}, tau={p.tau} ms, kappa^2={p.kappa ** 2:g}/ms, "
        f"mu={p.mu:g}, gamma_b={p.gamma_b:g}/ms, sigma_b={p.sigma_b:g} pT^2/ms, seed={d.seed}"
    )

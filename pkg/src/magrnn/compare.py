"""Side-by-side evaluation of the trained network and the RTS smoother."""
from __future__ import annotations

import csv
import math

import numpy as np

from . import gauss, train
from .nn import Seq2SeqModel
from .sim import Dataset


def ratio_with_se(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """``mean(a) / mean(b)`` for paired samples and its delta-method standard error."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    r = a.mean() / b.mean()
    se = np.std(a - r * b, ddof=1) / (math.sqrt(len(a)) * b.mean())
    return float(r), float(se)


def compare(model: Seq2SeqModel, test: Dataset, workers: int = 1):
    """Run both estimators on ``test``.

    Returns ``(summary, rnn_curve, baseline_curve)`` where ``summary`` is an
    ordered dict of scalar metrics.
    """
    rnn = train.evaluate_error_curve(model, test, workers=workers)
    base = gauss.baseline_error_curve(test.params, test)
    ratio, se = ratio_with_se(rnn.mid_per_record, base.sq_err_smoothed_mid)
    tf, ar = train.teacher_vs_autoregressive_gap(model, test, workers=workers)
    summary = {
        "n_records": len(test),
        "rnn_mid_error": rnn.summary["mid"],
        "smoother_mid_error": base.summary_smoothed["mid"],
        "filter_mid_error": base.summary_filtered["mid"],
        "ratio_rnn_to_smoother": ratio,
        "ratio_rnn_to_smoother_se": se,
        "rnn_edge_ratio_start": rnn.summary["ratio_start"],
        "rnn_edge_ratio_end": rnn.summary["ratio_end"],
        "smoother_edge_ratio_start": base.summary_smoothed["ratio_start"],
        "smoother_edge_ratio_end": base.summary_smoothed["ratio_end"],
        "teacher_forced_mse": tf,
        "autoregressive_mse": ar,
    }
    return summary, rnn, base


def write_summary_csv(summary: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k, v in summary.items():
            w.writerow([k, v if isinstance(v, int) else repr(float(v))])


def write_combined_csv(rnn: train.ErrorCurve, base: gauss.BaselineCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "error_rnn", "error_rnn_normalized", "error_smoothed", "error_filtered"])
        for row in zip(rnn.times, rnn.error, rnn.error_normalized, base.error_smoothed, base.error_filtered):
            w.writerow([repr(float(v)) for v in row])


def format_summary(summary: dict) -> str:
    width = max(len(k) for k in summary)
    lines = []
    for k, v in summary.items():
        lines.append(f"{k:<{width}}  {v}" if isinstance(v, int) else f"{k:<{width}}  {v:.6g}")
    return "\n".join(lines)

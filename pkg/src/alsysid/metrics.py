"""Prediction-quality and constraint metrics, plus across-run aggregation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


def _pair(y, yhat):
    y = np.asarray(y, float)
    yhat = np.asarray(yhat, float)
    y = y[:, None] if y.ndim == 1 else y
    yhat = yhat[:, None] if yhat.ndim == 1 else yhat
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {yhat.shape}")
    return y, yhat


def rmse(y, yhat) -> float:
    """Root-mean-square error over all samples (and outputs)."""
    y, yhat = _pair(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def r2(y, yhat) -> float:
    """Coefficient of determination in percent."""
    y, yhat = _pair(y, yhat)
    sst = float(np.sum((y - y.mean(axis=0)) ** 2))
    if sst == 0:
        return float("nan")
    return (1.0 - float(np.sum((y - yhat) ** 2)) / sst) * 100.0


def violation(y, y_min, y_max) -> np.ndarray:
    """Per-sample bound violation ``sum_i max(0, y_i - y_max_i, y_min_i - y_i)``."""
    y = np.asarray(y, float)
    if y.ndim == 1:
        y = y[:, None]
    v = np.maximum(0.0, np.maximum(y - np.asarray(y_max), np.asarray(y_min) - y))
    return v.sum(axis=1)


def mcv(y, y_min, y_max) -> float:
    """Mean constraint violation over the given samples (0 for an empty window)."""
    v = violation(y, y_min, y_max)
    return float(v.mean()) if v.size else 0.0


def median_mad(values, axis=0):
    """Median and mean absolute deviation about the median, ignoring NaNs."""
    a = np.asarray(values, float)
    med = np.nanmedian(a, axis=axis)
    mad = np.nanmean(np.abs(a - np.expand_dims(med, axis)), axis=axis)
    return med, mad


@dataclass
class MetricsReport:
    rmse_train: float
    rmse_test: float
    r2_test: float
    mcv: float
    status: str = "ok"
    seed: int | None = None
    strategy: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


_KEYS = ("rmse_train", "rmse_test", "r2_test", "mcv")


def aggregate(reports) -> dict:
    """Per-metric median / MAD over the runs that finished, plus the aborted count."""
    ok = [r for r in reports if r.status == "ok"]
    out = {"n_runs": len(ok), "n_aborted": len(reports) - len(ok)}
    for key in _KEYS:
        vals = np.array([getattr(r, key) for r in ok], float)
        if vals.size:
            med, mad = median_mad(vals)
            out[key] = {"median": float(med), "mad": float(mad)}
        else:
            out[key] = {"median": None, "mad": None}
    return out

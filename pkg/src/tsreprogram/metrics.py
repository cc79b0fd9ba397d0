"""Point-forecast metrics: MAE, MSE, R^2, and SMAPE.

All metrics operate on the pooled concatenation of forecast/truth pairs in
capacity-normalized units.  SMAPE uses the 0-200 range and treats a
zero/zero pair as contributing 0, which keeps it defined on nighttime PV
data where both truth and forecast are exactly zero for long stretches.
Negative R^2 is clamped to 0 in the reported value only; the raw value is
kept for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, ShapeError


def _check_pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.ndim != 1 or y_hat.ndim != 1:
        raise ShapeError("metrics expect 1-D arrays")
    if y.shape != y_hat.shape:
        raise ShapeError(f"length mismatch: {y.shape[0]} vs {y_hat.shape[0]}")
    if y.size == 0:
        raise ShapeError("metrics of empty arrays")
    return y, y_hat


def mae(y, y_hat) -> float:
    y, y_hat = _check_pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


def mse(y, y_hat) -> float:
    y, y_hat = _check_pair(y, y_hat)
    return float(np.mean((y - y_hat) ** 2))


def r2(y, y_hat) -> tuple[float, float]:
    """Return (r2_raw, r2_reported) where reported = max(0, raw)."""
    y, y_hat = _check_pair(y, y_hat)
    if y.size < 2:
        raise ShapeError("r2 needs at least 2 points")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateError("r2 undefined for constant ground truth")
    ss_res = float(np.sum((y - y_hat) ** 2))
    raw = 1.0 - ss_res / ss_tot
    return raw, max(0.0, raw)


def smape(y, y_hat) -> float:
    y, y_hat = _check_pair(y, y_hat)
    denom = np.abs(y) + np.abs(y_hat)
    num = np.abs(y - y_hat)
    terms = np.zeros_like(denom)
    nz = denom > 0.0
    terms[nz] = num[nz] / denom[nz]
    return float(200.0 / y.size * terms.sum())


@dataclass
class MetricsReport:
    mae: float
    mse: float
    r2_raw: float
    r2_reported: float
    smape: float
    n: int

    @classmethod
    def compute(cls, y, y_hat) -> "MetricsReport":
        y = np.asarray(y, dtype=np.float64)
        raw, reported = r2(y, y_hat)
        return cls(
            mae=mae(y, y_hat),
            mse=mse(y, y_hat),
            r2_raw=raw,
            r2_reported=reported,
            smape=smape(y, y_hat),
            n=int(y.size),
        )

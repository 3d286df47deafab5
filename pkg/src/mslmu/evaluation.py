"""Forecast error metrics and promotion percentages."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

MAPE_FLOOR = 1e-6


@dataclass(frozen=True)
class MetricsReport:
    """MAPE as a fraction (``None`` when a reference value is ~0), MAE and RMSE in m/s."""

    mape: Optional[float]
    mae: float
    rmse: float
    count: int

    @property
    def mape_pct(self) -> Optional[float]:
        return None if self.mape is None else 100.0 * self.mape

    def as_row(self) -> dict:
        return {"mape_pct": self.mape_pct, "mae": self.mae, "rmse": self.rmse}


def metrics(real, pred, mask=None) -> MetricsReport:
    real = np.asarray(real, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if real.shape != pred.shape:
        raise ValueError(f"length mismatch: {real.size} vs {pred.size}")
    if mask is not None:
        mask = np.asarray(mask)
        if mask.dtype == bool:
            if mask.shape != real.shape:
                raise ValueError("boolean mask must match the series length")
            idx = np.flatnonzero(mask)
        else:
            idx = mask.astype(int).ravel()
            if idx.size and (idx.min() < 0 or idx.max() >= real.size):
                raise IndexError("mask index out of range")
        real, pred = real[idx], pred[idx]
    if real.size == 0:
        raise ValueError("no samples to evaluate")
    err = real - pred
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    if np.any(np.abs(real) < MAPE_FLOOR):
        mape = None
    else:
        mape = float(np.mean(np.abs(err / real)))
    return MetricsReport(mape, mae, rmse, int(real.size))


def promotion(m1: float, m2: float) -> float:
    """Relative improvement of model 1 over model 2 in percent; negative if model 1 is worse."""
    if m2 == 0:
        raise ZeroDivisionError("reference metric m2 is zero")
    # exact arithmetic on the shortest decimal form, rounded once, so (0.93, 1.20) gives 22.5
    a, b = Fraction(str(float(m1))), Fraction(str(float(m2)))
    return float((b - a) / b * 100)

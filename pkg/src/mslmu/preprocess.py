"""Denoising, scaling, windowing and splitting of wind-speed series."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_WMF_WEIGHTS = (0.90, 0.381, 0.73, 0.66, 0.559)
SPLIT_FRACTIONS = (0.7, 0.2)


@dataclass(frozen=True)
class WmfFilter:
    """Causal weighted mean filter; ``weights[0]`` multiplies the newest sample."""

    weights: tuple = DEFAULT_WMF_WEIGHTS

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be non-negative with at least one positive entry")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @property
    def size(self) -> int:
        return len(self.weights)


def wmf_denoise(series, filt: WmfFilter = WmfFilter()) -> np.ndarray:
    """Weighted moving average over the current and ``size - 1`` previous samples.

    Near the start the window is truncated and the weights renormalised over
    the samples that exist.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains missing or non-finite values; impute first")
    w = np.asarray(filt.weights)
    num = np.zeros_like(x)
    den = np.zeros_like(x)
    for k, wk in enumerate(w):
        if k >= x.size:
            break
        num[k:] += wk * x[:x.size - k]
        den[k:] += wk
    # a zero-weight newest tap can leave the first samples without support
    out = np.divide(num, den, out=x.copy(), where=den > 0)
    return out


@dataclass(frozen=True)
class Normalizer:
    """Min-max scaling onto ``[0, 1]`` fitted on a training portion."""

    minimum: float
    maximum: float

    def __post_init__(self):
        if not self.maximum > self.minimum:
            raise ValueError(f"degenerate range: min={self.minimum}, max={self.maximum}")

    @classmethod
    def fit(cls, train_series) -> "Normalizer":
        x = np.asarray(train_series, dtype=float)
        x = x[np.isfinite(x)]
        if x.size == 0:
            raise ValueError("no finite training values")
        return cls(float(x.min()), float(x.max()))

    @property
    def span(self) -> float:
        return self.maximum - self.minimum

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.minimum) / self.span

    def inverse(self, x):
        return np.asarray(x, dtype=float) * self.span + self.minimum

    def inverse_scale(self, dx):
        """Map a difference in scaled units back to physical units."""
        return np.asarray(dx, dtype=float) * self.span


def normalize(series, normalizer: Normalizer):
    return normalizer.transform(series)


def denormalize(series, normalizer: Normalizer):
    return normalizer.inverse(series)


def make_windows(series, lookback: int, horizon: int = 1):
    """Sliding ``(window, target)`` pairs: window ``[i, i+L)`` predicts sample ``i+L``."""
    if horizon != 1:
        raise ValueError("only one-step-ahead targets are supported")
    x = np.asarray(series, dtype=float)
    if lookback < 1:
        raise ValueError("lookback must be >= 1")
    if x.size <= lookback:
        raise ValueError(f"series of length {x.size} too short for lookback {lookback}")
    windows = sliding_window_view(x, lookback)[:-1]
    return windows.copy(), x[lookback:].copy()


def windows_at(series, lookback: int, targets_idx) -> np.ndarray:
    """Windows ``series[t-L:t]`` for each forecast index ``t``."""
    x = np.asarray(series, dtype=float)
    idx = np.asarray(targets_idx, dtype=int)
    if idx.size and (idx.min() < lookback or idx.max() >= x.size + 1):
        raise IndexError("forecast index leaves no room for the lookback window")
    return sliding_window_view(x, lookback)[idx - lookback]


def split_sizes(length: int, fractions: Sequence[float] = SPLIT_FRACTIONS) -> tuple[int, int, int]:
    """Train/validation/test sizes with floor rounding; the remainder goes to test."""
    if length < 10:
        raise ValueError(f"need at least 10 samples to split, got {length}")
    n_train = int(np.floor(length * fractions[0] + 1e-9))
    n_val = int(np.floor(length * fractions[1] + 1e-9))
    return n_train, n_val, length - n_train - n_val


def split(data, fractions: Sequence[float] = SPLIT_FRACTIONS):
    """Contiguous 70/20/10 partition of a series or of a pair set ``(windows, targets)``."""
    if isinstance(data, tuple) and len(data) == 2:
        windows, targets = data
        a, b, _ = split_sizes(len(targets), fractions)
        return (
            (windows[:a], targets[:a]),
            (windows[a:a + b], targets[a:a + b]),
            (windows[a + b:], targets[a + b:]),
        )
    a, b, _ = split_sizes(len(data), fractions)
    return data[:a], data[a:a + b], data[a + b:]


def extract_pts(series, samples_per_day: int) -> list[np.ndarray]:
    """Periodic time series: one sub-series per time-of-day slot."""
    if samples_per_day < 1:
        raise ValueError("samples_per_day must be >= 1")
    x = np.asarray(series)
    if x.size < samples_per_day:
        raise ValueError("series shorter than one day")
    return [x[s::samples_per_day] for s in range(samples_per_day)]


def merge_pts(slots: Sequence[np.ndarray]) -> np.ndarray:
    """Inverse of :func:`extract_pts`."""
    spd = len(slots)
    total = sum(len(s) for s in slots)
    out = np.empty(total, dtype=np.result_type(*slots))
    for s, slot in enumerate(slots):
        out[s::spd] = slot
    return out

"""Seeded synthetic wind-farm clusters.

Site ``i`` observes a latent wind process ``lag_i`` steps late::

    latent_i(t) = diurnal_amp * sin(2 pi t / spd)
                  + c * z_shared(t) + sqrt(1 - c**2) * z_i(t)
    site_i(t)   = max(0, mean_i + scale_i * latent_i(t - lag_i) + noise_level * eps_i(t))

``z_shared`` and ``z_i`` are independent unit-variance AR(1) processes and
``eps_i`` is white noise.  Within one time-of-day slot the diurnal term is
constant, so the expected per-slot Kendall correlation between two sites
grows with the shared weight ``c`` (``correlation_strength``) and is zero at
``c = 0``.  By default the first site lags the others, so neighbours carry
information about its next values.
"""

from __future__ import annotations

from datetime import datetime, timedelta
from typing import Optional, Sequence

import numpy as np

from .cluster import SiteCluster

AR_COEF = 0.97
MEAN_SPEED = 7.0
SCALE = 1.5
DIURNAL_AMP = 0.8


def _ar1(rng: np.random.Generator, n: int, phi: float) -> np.ndarray:
    eps = rng.standard_normal(n) * np.sqrt(1 - phi ** 2)
    z = np.empty(n)
    z[0] = rng.standard_normal()
    for t in range(1, n):
        z[t] = phi * z[t - 1] + eps[t]
    return z


def default_lags(sites: int) -> list[int]:
    return [2] + [i % 2 for i in range(sites - 1)]


def generate_synthetic(seed: int, sites: int = 3, length: int = 10000, correlation_strength: float = 0.97,
                       noise_level: float = 0.1, samples_per_day: int = 96,
                       lags: Optional[Sequence[int]] = None, start: datetime = datetime(2020, 1, 1),
                       return_clean: bool = False):
    """Generate a ``sites`` x ``length`` cluster; optionally also the noise-free series."""
    if sites < 2:
        raise ValueError("need at least two sites")
    if length < 1000:
        raise ValueError("length must be >= 1000")
    if not 0 <= correlation_strength <= 1:
        raise ValueError("correlation_strength must lie in [0, 1]")
    if noise_level < 0:
        raise ValueError("noise_level must be non-negative")
    if samples_per_day < 1:
        raise ValueError("samples_per_day must be >= 1")
    lags = list(default_lags(sites) if lags is None else lags)
    if len(lags) != sites or min(lags) < 0:
        raise ValueError("one non-negative lag per site required")
    rng = np.random.default_rng(seed)
    max_lag = max(lags)
    total = length + max_lag
    c = correlation_strength
    shared = _ar1(rng, total, AR_COEF)
    t = np.arange(total)
    diurnal = DIURNAL_AMP * np.sin(2 * np.pi * t / samples_per_day)
    means = MEAN_SPEED + rng.uniform(-0.15, 0.15, sites)
    scales = SCALE * (1 + rng.uniform(-0.05, 0.05, sites))
    clean = np.empty((sites, length))
    noisy = np.empty((sites, length))
    for i, lag in enumerate(lags):
        own = _ar1(rng, total, AR_COEF)
        latent = diurnal + c * shared + np.sqrt(1 - c ** 2) * own
        # site i at time t sees latent(t - lag); offset so every site has history
        seg = latent[max_lag - lag:max_lag - lag + length]
        clean[i] = means[i] + scales[i] * seg
        noisy[i] = np.maximum(0.0, clean[i] + noise_level * rng.standard_normal(length))
    step = timedelta(days=1) / samples_per_day
    ids = [f"site{i + 1}" for i in range(sites)]
    meta = {"generator": "synthetic", "seed": seed, "correlation_strength": c,
            "noise_level": noise_level, "lags": lags}
    cluster = SiteCluster(ids, noisy, start, step, meta)
    if return_clean:
        return cluster, clean
    return cluster


def noise_for_snr(seed: int, snr_db: float, **kwargs) -> float:
    """White-noise level giving the requested signal-to-noise ratio on site 1."""
    _, clean = generate_synthetic(seed, noise_level=0.0, return_clean=True, **kwargs)
    power = np.var(clean[0])
    return float(np.sqrt(power / 10 ** (snr_db / 10)))

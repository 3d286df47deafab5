"""Aligned multi-site wind-speed series."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np


@dataclass
class SiteCluster:
    """Equal-length series for several sites on a uniform time grid.

    ``values`` has shape ``(sites, length)``; missing samples are NaN.
    """

    site_ids: list
    values: np.ndarray
    start: datetime = datetime(2020, 1, 1)
    step: timedelta = timedelta(minutes=15)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.site_ids = [str(s) for s in self.site_ids]
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != len(self.site_ids):
            raise ValueError("one series per site id required")
        if len(set(self.site_ids)) != len(self.site_ids):
            raise ValueError("duplicate site ids")
        if self.step <= timedelta(0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.values.shape[1]

    @property
    def samples_per_day(self) -> int:
        per_day = timedelta(days=1) / self.step
        if abs(per_day - round(per_day)) > 1e-9:
            raise ValueError(f"step {self.step} does not divide a day")
        return int(round(per_day))

    @property
    def mask(self) -> np.ndarray:
        """True where a sample is missing."""
        return np.isnan(self.values)

    def index(self, site) -> int:
        try:
            return self.site_ids.index(str(site))
        except ValueError:
            raise KeyError(f"unknown site {site!r}") from None

    def series(self, site) -> np.ndarray:
        return self.values[self.index(site)]

    def timestamps(self) -> list:
        return [self.start + i * self.step for i in range(len(self))]

    def with_values(self, values) -> "SiteCluster":
        return SiteCluster(list(self.site_ids), np.asarray(values, dtype=float), self.start, self.step, dict(self.meta))

    def with_series(self, site, series) -> "SiteCluster":
        values = self.values.copy()
        values[self.index(site)] = series
        return self.with_values(values)

    def subset(self, sites) -> "SiteCluster":
        rows = [self.index(s) for s in sites]
        return SiteCluster([str(s) for s in sites], self.values[rows], self.start, self.step, dict(self.meta))

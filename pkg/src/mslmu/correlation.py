"""Kendall rank correlation across a cluster, CPK weights and gap imputation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cluster import SiteCluster
from .preprocess import extract_pts


class ImputationError(ValueError):
    """A gap cannot be filled under the requested method's preconditions."""


def _concordance_sum(x: np.ndarray, y: np.ndarray, block: int = 1024) -> int:
    """sum_{i<j} sign(x_i - x_j) * sign(y_i - y_j), in exact integer arithmetic."""
    n = x.size
    total = 0
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        sx = np.sign(x[lo:hi, None] - x[None, :]).astype(np.int8)
        sy = np.sign(y[lo:hi, None] - y[None, :]).astype(np.int8)
        prod = (sx * sy).astype(np.int64)
        # keep only j > i
        cols = np.arange(n)[None, :]
        rows = np.arange(lo, hi)[:, None]
        total += int(prod[cols > rows].sum())
    return total


def krcc(x, y) -> float:
    """Kendall's tau-a: ``2 S / (n (n - 1))``; tied pairs contribute zero."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    n = x.size
    if n < 2:
        raise ValueError("need at least two observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("missing values in krcc input")
    return 2 * _concordance_sum(x, y) / (n * (n - 1))


def cluster_krcc(cluster: SiteCluster, pair, span: Optional[slice] = None) -> float:
    """Mean over time-of-day slots of the KRCC between two sites' periodic series.

    Days where either site is missing are dropped slot by slot.  ``span``
    restricts the analysis range (e.g. to the training portion).
    """
    a, b = pair
    if str(a) == str(b):
        return 1.0
    span = span or slice(None)
    xa = cluster.series(a)[span]
    xb = cluster.series(b)[span]
    spd = cluster.samples_per_day
    values = []
    for sa, sb in zip(extract_pts(xa, spd), extract_pts(xb, spd)):
        ok = np.isfinite(sa) & np.isfinite(sb)
        if ok.sum() < 2:
            raise ValueError("a time-of-day slot has fewer than 2 complete days")
        values.append(krcc(sa[ok], sb[ok]))
    return float(np.mean(values))


@dataclass(frozen=True)
class CpkMatrix:
    """Pairwise KRCC ``r`` (unit diagonal) and compensation weights ``k`` (zero diagonal)."""

    site_ids: tuple
    r: np.ndarray
    k: np.ndarray

    def row(self, site) -> dict:
        i = self.site_ids.index(str(site))
        return {s: float(self.k[i, j]) for j, s in enumerate(self.site_ids) if j != i}

    def weight(self, alpha, beta) -> float:
        return float(self.k[self.site_ids.index(str(alpha)), self.site_ids.index(str(beta))])


def cpk_weights(r_matrix, tol: float = 1e-9) -> np.ndarray:
    """``K[a, b] = r[a, b] / (sum_l r[a, l] - r[a, a])`` off the diagonal, zero on it."""
    r = np.asarray(r_matrix, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("r matrix must be square")
    if not np.allclose(np.diag(r), 1.0):
        raise ValueError("r matrix must have a unit diagonal")
    den = r.sum(axis=1) - np.diag(r)
    bad = np.abs(den) < tol
    if np.any(bad):
        raise ValueError(f"degenerate CPK denominator for rows {np.flatnonzero(bad).tolist()}")
    k = r / den[:, None]
    np.fill_diagonal(k, 0.0)
    return k


def krcc_matrix(cluster: SiteCluster, span: Optional[slice] = None) -> np.ndarray:
    n = len(cluster.site_ids)
    r = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            r[i, j] = r[j, i] = cluster_krcc(cluster, (cluster.site_ids[i], cluster.site_ids[j]), span)
    return r


def compute_cpk(cluster: SiteCluster, span: Optional[slice] = None) -> CpkMatrix:
    r = krcc_matrix(cluster, span)
    return CpkMatrix(tuple(cluster.site_ids), r, cpk_weights(r))


def find_gaps(series) -> list[tuple[int, int]]:
    """Maximal runs of missing (NaN) samples as ``(start, length)``."""
    miss = np.isnan(np.asarray(series, dtype=float))
    if not miss.any():
        return []
    padded = np.concatenate([[False], miss, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return [(int(s), int(e - s)) for s, e in zip(edges[::2], edges[1::2])]


def impute_maa(series, order: int) -> np.ndarray:
    """Fill each missing sample with the mean of the ``order`` preceding samples.

    Filling proceeds left to right, so values imputed earlier in a run feed
    the later ones.
    """
    if order < 1:
        raise ValueError("autoregressive order must be >= 1")
    x = np.asarray(series, dtype=float).copy()
    gaps = find_gaps(x)
    if gaps and gaps[0][0] < order:
        raise ImputationError(f"gap at index {gaps[0][0]} has fewer than {order} samples of history")
    for start, length in gaps:
        for i in range(start, start + length):
            x[i] = x[i - order:i].mean()
    return x


def impute_cck(cluster: SiteCluster, site, gap_positions, k: CpkMatrix) -> np.ndarray:
    """Fill ``site`` at ``gap_positions`` with the CPK-weighted neighbour values."""
    i = cluster.index(site)
    x = cluster.values[i].copy()
    pos = np.asarray(gap_positions, dtype=int)
    if pos.size == 0:
        return x
    order = [k.site_ids.index(s) for s in cluster.site_ids]
    weights = k.k[order][:, order][i]
    neighbours = [j for j in range(len(cluster.site_ids)) if j != i]
    block = cluster.values[neighbours][:, pos]
    missing = np.isnan(block)
    if missing.any():
        col = int(pos[np.flatnonzero(missing.any(axis=0))[0]])
        raise ImputationError(f"neighbour also missing at index {col}; cannot apply cluster imputation")
    x[pos] = weights[neighbours] @ block
    return x


def impute_cluster(cluster: SiteCluster, method: str = "cck", order: int = 4,
                   k: Optional[CpkMatrix] = None, sites=None) -> SiteCluster:
    """Complete every gap of the given sites (all by default)."""
    values = cluster.values.copy()
    for site in sites or cluster.site_ids:
        row = cluster.index(site)
        gaps = find_gaps(values[row])
        if not gaps:
            continue
        if method == "maa":
            values[row] = impute_maa(values[row], order)
        elif method == "cck":
            if k is None:
                raise ValueError("cluster imputation needs a CPK matrix")
            pos = np.concatenate([np.arange(s, s + n) for s, n in gaps])
            values[row] = impute_cck(cluster, site, pos, k)
        else:
            raise ValueError(f"unknown imputation method {method!r}")
    return cluster.with_values(values)

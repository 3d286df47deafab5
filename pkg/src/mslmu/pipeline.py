"""Cluster preparation, ensemble fitting and forecasting on the 70/20/10 split."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cluster import SiteCluster
from .config import ExperimentConfig
from .correlation import CpkMatrix, compute_cpk, impute_cluster
from .ensemble import EnsembleModel, train_ensemble
from .evaluation import MetricsReport, metrics
from .preprocess import Normalizer, WmfFilter, split_sizes, wmf_denoise


@dataclass
class Prepared:
    """A cluster after imputation, optional denoising and scaling.

    ``physical`` holds the processed series in m/s; ``scaled`` the same
    series mapped through the per-site normalisers.  ``reference`` is the
    target series forecasts are scored against.
    """

    cluster: SiteCluster
    completed: SiteCluster
    physical: dict
    scaled: dict
    normalizers: dict
    cpk: CpkMatrix
    target: str
    sizes: tuple
    reference: np.ndarray

    @property
    def length(self) -> int:
        return len(self.cluster)

    def split_ts(self, offset: int):
        """Forecast indices of the train, validation and test portions."""
        n_train, n_val, _ = self.sizes
        if offset >= n_train:
            raise ValueError("lookback exceeds the training portion")
        return (np.arange(offset, n_train), np.arange(n_train, n_train + n_val),
                np.arange(n_train + n_val, self.length))


def resolve_target(cluster: SiteCluster, cfg: ExperimentConfig) -> str:
    target = cfg.target or cluster.site_ids[0]
    cluster.index(target)
    return str(target)


def prepare(cluster: SiteCluster, cfg: ExperimentConfig, cpk: Optional[CpkMatrix] = None,
            normalizers: Optional[dict] = None, reference_from: Optional[SiteCluster] = None) -> Prepared:
    """Impute, denoise and scale a cluster.

    CPK weights and normalisers are estimated on the training portion unless
    given.  ``reference_from`` supplies a gap-free cluster whose processed
    target is used as the scoring reference (the missing-data study scores
    imputed runs against the complete data).
    """
    if cfg.sites:
        cluster = cluster.subset(cfg.sites)
    target = resolve_target(cluster, cfg)
    sizes = split_sizes(len(cluster))
    train_span = slice(0, sizes[0])
    if cpk is None:
        cpk = compute_cpk(cluster, train_span)
    completed = cluster
    if cluster.mask.any():
        completed = impute_cluster(cluster, cfg.imputation.method, cfg.imputation.order, cpk)
    physical = _process(completed, cfg)
    if normalizers is None:
        normalizers = {s: Normalizer.fit(physical[s][train_span]) for s in completed.site_ids}
    scaled = {s: normalizers[s].transform(physical[s]) for s in completed.site_ids}
    if reference_from is not None:
        reference = _process(reference_from.subset(completed.site_ids), cfg)[target]
    elif cfg.eval_target == "raw":
        reference = completed.series(target).copy()
    else:
        reference = physical[target]
    return Prepared(cluster, completed, physical, scaled, normalizers, cpk, target, sizes, reference)


def _process(cluster: SiteCluster, cfg: ExperimentConfig) -> dict:
    filt: Optional[WmfFilter] = cfg.wmf_filter() if cfg.wmf.enabled else None
    out = {}
    for s in cluster.site_ids:
        x = cluster.series(s)
        out[s] = wmf_denoise(x, filt) if filt is not None else x.copy()
    return out


def fit(prep: Prepared, cfg: ExperimentConfig, seed: Optional[int] = None, n: Optional[int] = None) -> EnsembleModel:
    ecfg = cfg.ensemble_config(seed, n)
    offset = max(c.lookback for c in ecfg.slices())
    train_ts, val_ts, _ = prep.split_ts(offset)
    model = train_ensemble(prep.scaled, prep.target, prep.cpk, train_ts, val_ts, ecfg)
    model.meta.update({
        "normalizers": {s: [n.minimum, n.maximum] for s, n in prep.normalizers.items()},
        "wmf": cfg.wmf.weights if cfg.wmf.enabled else None,
        "cpk_sites": list(prep.cpk.site_ids),
        "cpk_r": prep.cpk.r.tolist(),
        "sizes": list(prep.sizes),
        "activation": cfg.activation,
        "cell": cfg.cell,
        "seed": cfg.seed if seed is None else seed,
    })
    return model


def forecast(model: EnsembleModel, prep: Prepared, ts) -> np.ndarray:
    """Physical-unit forecasts of the target at indices ``ts``."""
    windows = model.windows(prep.scaled, ts)
    return prep.normalizers[model.target].inverse(model.predict(windows))


def holdout_indices(model: EnsembleModel, prep: Prepared) -> np.ndarray:
    return prep.split_ts(model.offset)[2]


def evaluate(model: EnsembleModel, prep: Prepared, ts=None) -> MetricsReport:
    ts = holdout_indices(model, prep) if ts is None else np.asarray(ts, dtype=int)
    return metrics(prep.reference[ts], forecast(model, prep, ts))

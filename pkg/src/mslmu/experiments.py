"""Replicated experiments: slice-count ablation, missing-data study, denoising study."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .cluster import SiteCluster
from .config import ExperimentConfig, ImputationSection, WmfSection
from .evaluation import MetricsReport, metrics, promotion
from .io import ingest
from .pipeline import Prepared, fit, forecast, holdout_indices, prepare
from .synthetic import generate_synthetic, noise_for_snr

log = logging.getLogger(__name__)

METRIC_NAMES = ("mape", "rmse", "mae")
GAP_TABLE_HEADER = ("gap_length", "metric", "normal", "single", "p_normal_single",
                 "cluster", "p_normal_cluster", "p_single_cluster")


@dataclass(frozen=True)
class ClusterSource:
    """Where trial data comes from: a fixed file, or a synthetic cluster per seed."""

    path: Optional[str] = None
    noise_level: Optional[float] = None

    def load(self, cfg: ExperimentConfig, seed: int) -> SiteCluster:
        if self.path is not None:
            return ingest(self.path)
        s = cfg.synth
        noise = s.noise_level if self.noise_level is None else self.noise_level
        return generate_synthetic(seed, sites=s.sites, length=s.length,
                                  correlation_strength=s.correlation_strength, noise_level=noise)


def model_name(cfg: ExperimentConfig, n: int, denoised: Optional[bool] = None) -> str:
    denoised = cfg.wmf.enabled if denoised is None else denoised
    cell = cfg.cell.upper()
    parts = ["WMF"] if denoised else []
    if n > 1 and cfg.combination == "cpk":
        parts.append("CPK")
    parts.append(("MS" + cell) if n > 1 else cell)
    return "-".join(parts)


def trial_seeds(cfg: ExperimentConfig) -> list[int]:
    return [cfg.seed + i for i in range(cfg.replicates)]


def run_trials(fn: Callable, seeds: Sequence[int], jobs: int = 1) -> list:
    """Map ``fn`` over seeds, optionally in worker processes; order is preserved."""
    if jobs <= 1 or len(seeds) <= 1:
        return [fn(s) for s in seeds]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, seeds))


def _mean_report(reports: Sequence[MetricsReport]) -> dict:
    mapes = [r.mape for r in reports]
    return {
        "mape": None if any(m is None for m in mapes) else float(np.mean(mapes)),
        "mae": float(np.mean([r.mae for r in reports])),
        "rmse": float(np.mean([r.rmse for r in reports])),
    }


def _row(name: str, n: int, agg: dict) -> dict:
    return {"model": name, "slices": n,
            "mape_pct": None if agg["mape"] is None else 100 * agg["mape"],
            "mae": agg["mae"], "rmse": agg["rmse"]}


# --- slice-count ablation -------------------------------------------------

@dataclass(frozen=True)
class AblationTrial:
    cfg: ExperimentConfig
    source: ClusterSource
    counts: tuple

    def __call__(self, seed: int) -> dict:
        prep = prepare(self.source.load(self.cfg, seed), self.cfg)
        full = fit(prep, self.cfg, seed=seed, n=max(self.counts))
        # a chain's first n slices equal the n-slice chain trained with the same seeds
        return {n: _evaluate(full.truncated(n), prep) for n in self.counts}


def _evaluate(model, prep: Prepared) -> MetricsReport:
    ts = holdout_indices(model, prep)
    return metrics(prep.reference[ts], forecast(model, prep, ts))


def ablate_slices(cfg: ExperimentConfig, source: ClusterSource, counts: Sequence[int] = (1, 2, 3),
                  jobs: int = 1) -> tuple[list[dict], list[dict]]:
    """One metrics row per slice count, averaged over replicate seeds; also per-seed rows."""
    counts = tuple(sorted(set(int(c) for c in counts)))
    seeds = trial_seeds(cfg)
    trials = run_trials(AblationTrial(cfg, source, counts), seeds, jobs)
    rows = [_row(model_name(cfg, n), n, _mean_report([t[n] for t in trials])) for n in counts]
    detail = []
    for seed, t in zip(seeds, trials):
        for n in counts:
            detail.append({"seed": seed, **_row(model_name(cfg, n), n, _mean_report([t[n]]))})
    return rows, detail


# --- missing-data study ---------------------------------------------------

def choose_gap_starts(rng: np.random.Generator, lo: int, hi: int, length: int, count: int,
                      margin: int) -> list[int]:
    """``count`` non-overlapping gap starts in ``[lo, hi - length)``, each followed by ``margin`` clean samples."""
    stride = length + margin
    slots = np.arange(lo, hi - length - margin + 1, stride)
    if len(slots) < count:
        raise ValueError(f"test range too short for {count} gaps of length {length}")
    return sorted(int(s) for s in rng.choice(slots, size=count, replace=False))


def inject_gaps(cluster: SiteCluster, site, positions) -> SiteCluster:
    """Blank ``site`` at ``positions``; every other value is left untouched."""
    values = cluster.values.copy()
    values[cluster.index(site), np.asarray(positions, dtype=int)] = np.nan
    return cluster.with_values(values)


def gap_positions(starts: Sequence[int], length: int) -> np.ndarray:
    return np.concatenate([np.arange(s, s + length) for s in starts])


@dataclass(frozen=True)
class MissingDataTrial:
    cfg: ExperimentConfig
    source: ClusterSource

    def __call__(self, seed: int) -> dict:
        cfg = self.cfg
        complete = self.source.load(cfg, seed)
        if cfg.sites:
            complete = complete.subset(cfg.sites)
        prep = prepare(complete, cfg)
        model = fit(prep, cfg, seed=seed)
        return missing_data_trial(complete, prep, model, cfg, seed)


def missing_data_trial(complete: SiteCluster, prep: Prepared, model, cfg: ExperimentConfig, seed: int) -> dict:
    """Metrics within injected gaps for complete, MAA-filled and CCK-filled inputs.

    Returns ``{gap_length: {"normal"|"single"|"cluster": MetricsReport}}``.
    """
    test = holdout_indices(model, prep)
    margin = model.offset + len(cfg.wmf.weights)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 6]))
    out = {}
    for length in cfg.gaps.lengths:
        if cfg.gaps.starts:
            starts = sorted(int(s) for s in cfg.gaps.starts)
        else:
            starts = choose_gap_starts(rng, int(test[0]) + margin, int(test[-1]) + 1, length,
                                       cfg.gaps.count, margin)
        pos = gap_positions(starts, length)
        if pos.min() < test[0] or pos.max() > test[-1]:
            raise ValueError("gap positions must lie inside the test range")
        gapped = inject_gaps(complete, prep.target, pos)
        res = {"normal": metrics(prep.reference[pos], forecast(model, prep, pos))}
        for label, method in (("single", "maa"), ("cluster", "cck")):
            c2 = replace(cfg, imputation=ImputationSection(method=method, order=cfg.imputation.order))
            p2 = prepare(gapped, c2, cpk=prep.cpk, normalizers=prep.normalizers, reference_from=complete)
            res[label] = metrics(p2.reference[pos], forecast(model, p2, pos))
        out[int(length)] = res
    return out


def missing_data_study(cfg: ExperimentConfig, source: ClusterSource, jobs: int = 1):
    """Table rows (gap length x metric) averaged over replicates, plus per-trial rows."""
    seeds = trial_seeds(cfg)
    trials = run_trials(MissingDataTrial(cfg, source), seeds, jobs)
    rows = []
    for length in cfg.gaps.lengths:
        agg = {k: _mean_report([t[int(length)][k] for t in trials]) for k in ("normal", "single", "cluster")}
        for metric in METRIC_NAMES:
            scale = 100.0 if metric == "mape" else 1.0
            v = {k: (None if agg[k][metric] is None else agg[k][metric] * scale) for k in agg}

            def p(m1, m2):
                return None if m1 is None or m2 is None or m2 == 0 else promotion(m1, m2)

            rows.append({
                "gap_length": int(length), "metric": metric,
                "normal": v["normal"], "single": v["single"], "p_normal_single": p(v["single"], v["normal"]),
                "cluster": v["cluster"], "p_normal_cluster": p(v["cluster"], v["normal"]),
                "p_single_cluster": p(v["cluster"], v["single"]),
            })
    detail = []
    for seed, t in zip(seeds, trials):
        for length, res in t.items():
            for label, rep in res.items():
                detail.append({"seed": seed, "gap_length": length, "set": label,
                               "mape_pct": rep.mape_pct, "mae": rep.mae, "rmse": rep.rmse})
    return rows, detail, trials


# --- denoising study ------------------------------------------------------

@dataclass(frozen=True)
class DenoiseTrial:
    cfg: ExperimentConfig
    source: ClusterSource

    def __call__(self, seed: int) -> dict:
        cluster = self.source.load(self.cfg, seed)
        out = {}
        for enabled in (False, True):
            cfg = replace(self.cfg, wmf=WmfSection(enabled=enabled, weights=list(self.cfg.wmf.weights)))
            prep = prepare(cluster, cfg)
            model = fit(prep, cfg, seed=seed, n=1)
            out["wmf" if enabled else "raw"] = _evaluate(model, prep)
        return out


def denoise_study(cfg: ExperimentConfig, source: ClusterSource, jobs: int = 1):
    """Single-slice forecasts with and without weighted-mean-filter preprocessing."""
    seeds = trial_seeds(cfg)
    trials = run_trials(DenoiseTrial(cfg, source), seeds, jobs)
    raw = _mean_report([t["raw"] for t in trials])
    wmf = _mean_report([t["wmf"] for t in trials])
    rows = [_row(model_name(cfg, 1, denoised=False), 1, raw), _row(model_name(cfg, 1, denoised=True), 1, wmf)]
    detail = []
    for seed, t in zip(seeds, trials):
        for key in ("raw", "wmf"):
            detail.append({"seed": seed, **_row(model_name(cfg, 1, denoised=key == "wmf"), 1,
                                                 _mean_report([t[key]]))})
    return rows, detail, trials


def snr_source(cfg: ExperimentConfig, snr_db: float, seed: int = 0) -> ClusterSource:
    s = cfg.synth
    level = noise_for_snr(seed, snr_db, sites=s.sites, length=s.length,
                          correlation_strength=s.correlation_strength)
    return ClusterSource(noise_level=level)

"""Multi-slice residual compensation built from LMU slices.

Slice 1 forecasts the target site from its own history.  Each later slice
forecasts the residual left by the slices before it, using the history of one
neighbouring site.  Forecasts combine either as a plain sum of slice outputs
or with slices 2..n scaled by the target's CPK weight for their neighbour.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .correlation import CpkMatrix
from .lmu import build_delay_network
from .preprocess import windows_at
from .training import TrainConfig, TrainedSlice, train_slice

log = logging.getLogger(__name__)

COMBINATIONS = ("plus", "cpk")


@dataclass(frozen=True)
class SliceConfig:
    lookback: int
    hidden: int
    theta: Optional[float] = None
    dt: float = 1.0
    d: Optional[int] = None

    @property
    def window(self) -> float:
        return float(self.theta if self.theta is not None else self.lookback)

    @property
    def order(self) -> int:
        return int(self.d if self.d is not None else max(1, round(self.window)))


FULL_SLICES = (SliceConfig(10, 512), SliceConfig(5, 256), SliceConfig(5, 128))
DESK_SLICES = (SliceConfig(10, 64), SliceConfig(5, 32), SliceConfig(5, 16))


def default_slice_configs(n: int, base: Sequence[SliceConfig] = FULL_SLICES) -> list[SliceConfig]:
    """First ``n`` slice shapes; beyond the listed ones the last shape repeats."""
    if n < 1:
        raise ValueError("need at least one slice")
    return [base[min(i, len(base) - 1)] for i in range(n)]


@dataclass(frozen=True)
class EnsembleConfig:
    n_slices: int = 3
    slice_configs: Optional[tuple] = None
    combination: str = "cpk"
    activation: str = "tanh"
    cell: str = "lmu"
    train: TrainConfig = TrainConfig()

    def __post_init__(self):
        if not 1 <= self.n_slices <= 5:
            raise ValueError("slice count must be between 1 and 5")
        if self.combination not in COMBINATIONS:
            raise ValueError(f"unknown combination {self.combination!r}")
        if self.cell not in ("lmu", "srnn"):
            raise ValueError(f"unknown cell {self.cell!r}")
        if self.slice_configs is not None and len(self.slice_configs) != self.n_slices:
            raise ValueError("one slice config per slice required")

    def slices(self) -> list[SliceConfig]:
        if self.slice_configs is not None:
            return list(self.slice_configs)
        return default_slice_configs(self.n_slices)


@dataclass
class EnsembleModel:
    target: str
    neighbors: list
    slices: list
    slice_configs: list
    combination: str = "cpk"
    k_row: Optional[list] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.slices) < 1:
            raise ValueError("ensemble needs at least one slice")
        if len(self.neighbors) != len(self.slices) - 1:
            raise ValueError("exactly one neighbour per compensation slice")
        if len(self.slice_configs) != len(self.slices):
            raise ValueError("one slice config per slice required")
        if self.combination == "cpk" and len(self.slices) > 1:
            if self.k_row is None or len(self.k_row) != len(self.neighbors):
                raise ValueError("cpk combination needs a weight per neighbour slice")

    @property
    def n(self) -> int:
        return len(self.slices)

    @property
    def offset(self) -> int:
        return max(c.lookback for c in self.slice_configs)

    @property
    def input_sites(self) -> list:
        return [self.target] + list(self.neighbors)

    def truncated(self, n: int) -> "EnsembleModel":
        """The ensemble formed by the first ``n`` slices."""
        if not 1 <= n <= self.n:
            raise ValueError(f"cannot keep {n} of {self.n} slices")
        k_row = None if self.k_row is None else list(self.k_row[:n - 1])
        return replace(self, neighbors=list(self.neighbors[:n - 1]), slices=list(self.slices[:n]),
                       slice_configs=list(self.slice_configs[:n]), k_row=k_row)

    def windows(self, series: dict, ts) -> list[np.ndarray]:
        return slice_inputs(series, self.target, self.neighbors, self.slice_configs, ts)

    def predict_slices(self, windows: Sequence) -> np.ndarray:
        """Per-slice forecasts, shape ``(n, T)``."""
        ws = _check_windows(self, windows)
        return np.stack([s.predict(w) for s, w in zip(self.slices, ws)])

    def predict(self, windows: Sequence):
        if self.combination == "cpk":
            return predict_improve(self, windows)
        return predict_plus(self, windows)


def _check_windows(model: EnsembleModel, windows: Sequence) -> list[np.ndarray]:
    if len(windows) != model.n:
        raise ValueError(f"expected {model.n} slice windows, got {len(windows)}")
    ws = []
    for i, (w, cfg) in enumerate(zip(windows, model.slice_configs)):
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w[None, :]
        if w.shape[1] != cfg.lookback:
            raise ValueError(f"slice {i + 1} window has length {w.shape[1]}, expected {cfg.lookback}")
        ws.append(w)
    if len({len(w) for w in ws}) != 1:
        raise ValueError("slice windows are not aligned to the same forecast times")
    return ws


def _maybe_scalar(values: np.ndarray, windows: Sequence):
    return float(values[0]) if np.ndim(windows[0]) == 1 else values


def predict_plus(model: EnsembleModel, windows: Sequence):
    """Sum of all slice forecasts."""
    return _maybe_scalar(model.predict_slices(windows).sum(axis=0), windows)


def predict_improve(model: EnsembleModel, windows: Sequence):
    """Slice 1 forecast plus CPK-weighted compensation slices."""
    preds = model.predict_slices(windows)
    if model.n == 1:
        return _maybe_scalar(preds[0], windows)
    if model.k_row is None:
        raise ValueError("ensemble has no CPK weights")
    out = preds[0] + np.asarray(model.k_row) @ preds[1:]
    return _maybe_scalar(out, windows)


def order_neighbors(site_ids: Sequence, target, cpk: CpkMatrix) -> list:
    """Neighbours by descending CPK weight against ``target``; ties by site id."""
    row = cpk.row(target)
    candidates = [s for s in site_ids if str(s) != str(target)]
    if not candidates:
        raise ValueError("target has no neighbours")
    return sorted(candidates, key=lambda s: (-row[str(s)], str(s)))


def slice_inputs(series: dict, target, neighbors: Sequence, configs: Sequence[SliceConfig], ts) -> list:
    sites = [target] + list(neighbors)
    if len(sites) < len(configs):
        raise ValueError("fewer input sites than slices")
    lengths = {len(series[s]) for s in sites[:len(configs)]}
    if len(lengths) != 1:
        raise ValueError("series are misaligned (different lengths)")
    return [windows_at(series[s], c.lookback, ts) for s, c in zip(sites, configs)]


def build_residual_datasets(series: dict, target, neighbors: Sequence, configs: Sequence[SliceConfig],
                            ts, slices: Sequence[TrainedSlice] = ()) -> list:
    """Per-slice ``(windows, labels)`` at forecast indices ``ts``.

    Slice 1 labels are the target values; slice ``i`` labels are what remains
    after subtracting the forecasts of the already trained slices ``1..i-1``.
    """
    configs = list(configs)
    if len(slices) < len(configs) - 1:
        raise ValueError(f"slice {len(slices) + 1} is untrained; cannot form later residual labels")
    ts = np.asarray(ts, dtype=int)
    windows = slice_inputs(series, target, neighbors, configs, ts)
    labels = [np.asarray(series[target], dtype=float)[ts]]
    for i in range(len(configs) - 1):
        labels.append(labels[-1] - slices[i].predict(windows[i]))
    return list(zip(windows, labels))


def _slice_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, i]).generate_state(1)[0])


def train_ensemble(series: dict, target, cpk: CpkMatrix, train_ts, val_ts,
                   config: EnsembleConfig = EnsembleConfig(), neighbors: Optional[Sequence] = None) -> EnsembleModel:
    """Train the slices in order; each one learns the residual of its predecessors."""
    configs = config.slices()
    n = config.n_slices
    if neighbors is None:
        neighbors = order_neighbors(list(series), target, cpk) if len(series) > 1 else []
    if len(neighbors) < n - 1:
        raise ValueError(f"{n} slices need {n - 1} neighbours, cluster provides {len(neighbors)}")
    neighbors = list(neighbors[:n - 1])
    slices: list[TrainedSlice] = []
    for i, cfg in enumerate(configs):
        train = build_residual_datasets(series, target, neighbors, configs[:i + 1], train_ts, slices)[i]
        val = build_residual_datasets(series, target, neighbors, configs[:i + 1], val_ts, slices)[i]
        dn = build_delay_network(cfg.window, cfg.dt, cfg.order)
        tc = replace(config.train, seed=_slice_seed(config.train.seed, i))
        trained = train_slice(train, val, dn, tc, hidden_size=cfg.hidden,
                              activation=config.activation, memory=config.cell == "lmu")
        log.info("slice %d trained: best epoch %d, val mse %.6g", i + 1, trained.best_epoch,
                 min(trained.val_loss_curve) if trained.val_loss_curve else float("nan"))
        slices.append(trained)
    k_row = [cpk.weight(target, nb) for nb in neighbors]
    return EnsembleModel(str(target), [str(s) for s in neighbors], slices, configs,
                         combination=config.combination, k_row=k_row)

"""Experiment configuration with a "full" profile (hidden 512/256/128) and a small "desk" profile (64/32/16).

Config files are YAML mappings whose keys mirror :class:`ExperimentConfig`;
unknown keys are rejected.  Example::

    profile: desk
    target: site1
    slices: 3
    combination: cpk
    wmf: {enabled: true, weights: [0.90, 0.381, 0.73, 0.66, 0.559]}
    train: {learning_rate: 0.001, max_epochs: 50, batch_size: 32}
    imputation: {method: cck, order: 4}
    gaps: {lengths: [5, 10, 15], count: 4}
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from .ensemble import DESK_SLICES, FULL_SLICES, EnsembleConfig, SliceConfig, default_slice_configs
from .preprocess import DEFAULT_WMF_WEIGHTS, WmfFilter
from .training import TrainConfig

PROFILES = {"full": FULL_SLICES, "desk": DESK_SLICES}


@dataclass
class WmfSection:
    enabled: bool = True
    weights: list = field(default_factory=lambda: list(DEFAULT_WMF_WEIGHTS))


@dataclass
class TrainSection:
    learning_rate: float = 1e-3
    max_epochs: int = 50
    batch_size: int = 32
    early_stop_patience: int = 10
    optimizer: str = "adam"
    clip_norm: Optional[float] = 1.0


@dataclass
class ImputationSection:
    method: str = "cck"
    order: int = 4


@dataclass
class GapSection:
    lengths: list = field(default_factory=lambda: [5, 10, 15])
    count: int = 4
    starts: Optional[list] = None


@dataclass
class SynthSection:
    sites: int = 3
    length: int = 10000
    correlation_strength: float = 0.97
    noise_level: float = 0.1


@dataclass
class ExperimentConfig:
    profile: str = "full"
    target: Optional[str] = None
    sites: Optional[list] = None
    slices: int = 3
    slice_configs: Optional[list] = None
    combination: str = "cpk"
    activation: str = "tanh"
    cell: str = "lmu"
    eval_target: str = "denoised"
    seed: int = 0
    replicates: int = 1
    wmf: WmfSection = field(default_factory=WmfSection)
    train: TrainSection = field(default_factory=TrainSection)
    imputation: ImputationSection = field(default_factory=ImputationSection)
    gaps: GapSection = field(default_factory=GapSection)
    synth: SynthSection = field(default_factory=SynthSection)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if self.eval_target not in ("denoised", "raw"):
            raise ValueError("eval_target must be 'denoised' or 'raw'")
        if self.imputation.method not in ("maa", "cck"):
            raise ValueError("imputation.method must be 'maa' or 'cck'")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        WmfFilter(tuple(self.wmf.weights))

    def slice_shapes(self, n: Optional[int] = None) -> list[SliceConfig]:
        n = self.slices if n is None else n
        if self.slice_configs:
            base = [SliceConfig(**c) if isinstance(c, dict) else c for c in self.slice_configs]
            return default_slice_configs(n, base)
        return default_slice_configs(n, PROFILES[self.profile])

    def wmf_filter(self) -> WmfFilter:
        return WmfFilter(tuple(self.wmf.weights))

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        return TrainConfig(seed=self.seed if seed is None else seed, **asdict(self.train))

    def ensemble_config(self, seed: Optional[int] = None, n: Optional[int] = None) -> EnsembleConfig:
        n = self.slices if n is None else n
        return EnsembleConfig(n_slices=n, slice_configs=tuple(self.slice_shapes(n)),
                              combination=self.combination, activation=self.activation,
                              cell=self.cell, train=self.train_config(seed))

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.slice_configs:
            d["slice_configs"] = [c if isinstance(c, dict) else asdict(c) for c in self.slice_configs]
        return d


_SECTIONS = {"wmf": WmfSection, "train": TrainSection, "imputation": ImputationSection,
             "gaps": GapSection, "synth": SynthSection}


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: Optional[dict]) -> ExperimentConfig:
    data = dict(data or {})
    for name, cls in _SECTIONS.items():
        if name in data:
            if not isinstance(data[name], dict):
                raise ValueError(f"section {name!r} must be a mapping")
            data[name] = _build(cls, data[name], name)
    return _build(ExperimentConfig, data, "config")


def load_config(path: Optional[Path]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is not None and not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return config_from_dict(data)

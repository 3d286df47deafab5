"""Multi-slice Legendre Memory Unit ensembles for wind-speed forecasting on site clusters."""

from .cluster import SiteCluster
from .config import ExperimentConfig, load_config
from .correlation import CpkMatrix, compute_cpk, cpk_weights, impute_cck, impute_cluster, impute_maa, krcc
from .ensemble import EnsembleConfig, EnsembleModel, SliceConfig, train_ensemble
from .evaluation import MetricsReport, metrics, promotion
from .lmu import DelayNetwork, LmuParams, LmuState, build_delay_network, forward_window, legendre_shifted, step
from .preprocess import Normalizer, WmfFilter, make_windows, wmf_denoise
from .synthetic import generate_synthetic
from .training import TrainConfig, TrainedSlice, train_slice

__version__ = "0.1.0"

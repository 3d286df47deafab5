"""Backpropagation through time for LMU slices and the slice training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lmu import (
    DelayNetwork,
    DimensionError,
    LmuParams,
    LmuState,
    activation_grad,
    forward_window,
)

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")


class TrainingDiverged(RuntimeError):
    """Loss or parameters became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 50
    batch_size: int = 32
    early_stop_patience: int = 10
    seed: int = 0
    optimizer: str = "adam"
    clip_norm: Optional[float] = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.early_stop_patience < 0:
            raise ValueError("early_stop_patience must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def loss_mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {target.size}")
    if pred.size == 0:
        raise ValueError("empty input")
    return float(np.mean((pred - target) ** 2))


def backprop(dn: DelayNetwork, params: LmuParams, state: LmuState, target, reduction: str = "sum"):
    """Exact gradients of the squared forecast error through a recorded forward pass.

    ``state`` must come from ``forward_window(..., record=True)``.  For a batch
    the per-window squared errors are summed (``reduction="sum"``) or averaged
    (``"mean"``).  Returns ``(loss, grads)`` with ``grads`` keyed like
    :data:`mslmu.lmu.TRAINABLE`; the frozen delay-network matrices get none.
    """
    if not state.record or not state.h_trace:
        raise ValueError("forward pass was not recorded; call forward_window(record=True)")
    L = len(state.h_trace)
    xs, ms, hs = state.x_trace, state.m_trace, state.h_trace
    if hs[0].shape[-1] != params.n or ms[0].shape[-1] != dn.d or params.d != dn.d:
        raise DimensionError("trace shapes do not match params")
    batched = hs[0].ndim == 2
    target = np.asarray(target, dtype=float)
    h_last = hs[-1]
    y = h_last @ params.output_weights + params.output_bias
    err = y - target
    if batched and err.shape != (h_last.shape[0],):
        raise DimensionError("target count does not match batch")
    scale = 1.0 / err.size if reduction == "mean" else 1.0
    loss = float(np.sum(err ** 2) * scale)
    dy = 2.0 * err * scale

    # Work on 2-D arrays throughout; a single window is a batch of one.
    def b2(a):
        return a if batched else a[None, ...]

    dy = np.atleast_1d(dy)
    g = {
        "output_weights": b2(h_last).T @ dy,
        "output_bias": np.array(dy.sum()),
    }
    n, d, p = params.n, dn.d, params.input_size
    de_x, de_h, de_m = np.zeros(p), np.zeros(n), np.zeros(d)
    dw_x, dw_h, dw_m = np.zeros((n, p)), np.zeros((n, n)), np.zeros((n, d))
    f = params.hidden_activation
    dh = np.multiply.outer(dy, params.output_weights)
    dm = np.zeros((dh.shape[0], d))
    zeros_h = np.zeros_like(b2(hs[0]))
    zeros_m = np.zeros_like(b2(ms[0]))
    for t in range(L - 1, -1, -1):
        x_t = b2(xs[t])
        h_t = b2(hs[t])
        m_t = b2(ms[t])
        h_prev = b2(hs[t - 1]) if t > 0 else zeros_h
        m_prev = b2(ms[t - 1]) if t > 0 else zeros_m
        dz = dh * activation_grad(f, h_t)
        dw_x += dz.T @ x_t
        dw_h += dz.T @ h_prev
        dw_m += dz.T @ m_t
        dm = dm + dz @ params.w_m
        du = dm @ dn.b_bar
        de_x += du @ x_t
        de_h += du @ h_prev
        de_m += du @ m_prev
        dh = dz @ params.w_h + np.multiply.outer(du, params.e_h)
        dm = dm @ dn.a_bar + np.multiply.outer(du, params.e_m)
    g.update(e_x=de_x, e_h=de_h, e_m=de_m, w_x=dw_x, w_h=dw_h, w_m=dw_m)
    for name in set(g) - set(params.trainable):
        g[name] = np.zeros_like(g[name])
    return loss, g


def backprop_window(dn: DelayNetwork, params: LmuParams, window, target):
    """Gradients of ``(forecast - target)**2`` for one window (or batch, summed)."""
    _, state = forward_window(dn, params, window, record=True)
    return backprop(dn, params, state, target)[1]


def batch_gradients(dn: DelayNetwork, params: LmuParams, windows, targets):
    """Mean squared error over a batch and its gradients."""
    _, state = forward_window(dn, params, windows, record=True)
    return backprop(dn, params, state, targets, reduction="mean")


class GradientDescent:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def update(self, params: LmuParams, grads: dict) -> LmuParams:
        new = {k: getattr(params, k) - self.learning_rate * grads[k] for k in params.trainable}
        return params.updated(**new)


class Adam:
    """Adaptive-moment gradient descent with the usual bias correction."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def update(self, params: LmuParams, grads: dict) -> LmuParams:
        self.t += 1
        lr_t = self.learning_rate * np.sqrt(1 - self.beta2 ** self.t) / (1 - self.beta1 ** self.t)
        new = {}
        for k in params.trainable:
            g = grads[k]
            m = self.m.get(k, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(k, 0.0) * self.beta2 + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            new[k] = getattr(params, k) - lr_t * m / (np.sqrt(v) + self.eps)
        return params.updated(**new)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate)
    return GradientDescent(config.learning_rate)


def clip_gradients(grads: dict, max_abs: Optional[float]) -> dict:
    """Rescale all gradients together so their largest entry is at most ``max_abs``."""
    if max_abs is None:
        return grads
    peak = max(float(np.max(np.abs(g))) for g in grads.values())
    if peak <= max_abs:
        return grads
    factor = max_abs / peak
    return {k: g * factor for k, g in grads.items()}


@dataclass
class TrainedSlice:
    params: LmuParams
    dn: DelayNetwork
    train_loss_curve: list = field(default_factory=list)
    val_loss_curve: list = field(default_factory=list)
    best_epoch: int = 0

    def predict(self, windows, chunk: int = 4096) -> np.ndarray:
        """Forecasts for a batch of windows ``(T, L)`` or ``(T, L, p)``."""
        w = np.asarray(windows, dtype=float)
        if w.ndim == 2 and self.params.input_size == 1:
            w = w[..., None]
        out = [forward_window(self.dn, self.params, w[i:i + chunk])[0] for i in range(0, len(w), chunk)]
        return np.concatenate(out) if out else np.empty(0)


def _as_pairs(dataset):
    windows, targets = dataset
    windows = np.asarray(windows, dtype=float)
    if windows.ndim == 2:
        windows = windows[..., None]
    targets = np.asarray(targets, dtype=float).ravel()
    if len(windows) == 0:
        raise ValueError("empty dataset")
    if len(windows) != len(targets):
        raise ValueError("windows and targets differ in length")
    return windows, targets


def train_slice(dataset, val_set, dn: DelayNetwork, config: TrainConfig = TrainConfig(),
                hidden_size: int = 32, activation: str = "tanh", memory: bool = True,
                init: Optional[LmuParams] = None) -> TrainedSlice:
    """Fit one LMU layer to ``(windows, targets)`` with early stopping on validation MSE.

    Returns the parameters from the epoch with the lowest validation loss.
    Runs are deterministic for a given ``config.seed``.
    """
    xw, yt = _as_pairs(dataset)
    xv, yv = _as_pairs(val_set)
    if xw.shape[1:] != xv.shape[1:]:
        raise ValueError("train and validation windows differ in shape")
    rng = np.random.default_rng(config.seed)
    params = init if init is not None else LmuParams.initialize(
        rng, hidden_size, dn.d, xw.shape[2], activation=activation, memory=memory)
    opt = make_optimizer(config)

    def val_loss(p):
        pred, _ = forward_window(dn, p, xv)
        return loss_mse(pred, yv)

    best_params, best_val, best_epoch = params, val_loss(params), 0
    train_curve, val_curve = [], []
    stale = 0
    n = len(xw)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = batch_gradients(dn, params, xw[idx], yt[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
            total += loss * len(idx)
            params = opt.update(params, clip_gradients(grads, config.clip_norm))
            if not params.all_finite():
                raise TrainingDiverged(f"non-finite parameters at epoch {epoch}")
        train_curve.append(total / n)
        v = val_loss(params)
        if not np.isfinite(v):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        val_curve.append(v)
        log.debug("epoch %d train %.6g val %.6g", epoch, train_curve[-1], v)
        if v < best_val:
            best_params, best_val, best_epoch, stale = params, v, epoch + 1, 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    # best_epoch counts completed epochs; 0 means the initial parameters won.
    return TrainedSlice(best_params, dn, train_curve, val_curve, best_epoch)

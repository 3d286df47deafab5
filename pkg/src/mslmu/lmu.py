"""Legendre Memory Unit: delay network, shifted Legendre basis and cell recurrence.

The memory of an LMU cell is a fixed linear system whose state ``m`` holds the
projection of the recent input history onto shifted Legendre polynomials.  A
nonlinear hidden state ``h`` is coupled to that memory through learned
encoders and kernels::

    u_t = e_x . x_t + e_h . h_{t-1} + e_m . m_{t-1}
    m_t = A_bar m_{t-1} + B_bar u_t
    h_t = f(W_x x_t + W_h h_{t-1} + W_m m_t)

``A_bar`` and ``B_bar`` are the forward-Euler discretisation
``A_bar = (dt / theta) A + I`` and ``B_bar = (dt / theta) B``.  Because ``A``
and ``B`` already carry a ``1 / theta`` factor, the discrete memory spans
``theta**2 / dt`` steps (see :attr:`DelayNetwork.window_steps`); with
``theta = 1`` this is the familiar ``theta / dt``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from math import comb
from typing import Optional

import numpy as np

ACTIVATIONS = ("tanh", "sigmoid")
TRAINABLE = ("e_x", "e_h", "e_m", "w_x", "w_h", "w_m", "output_weights", "output_bias")


class DimensionError(ValueError):
    """Array shapes of state, parameters and delay network disagree."""


class NonFiniteError(ValueError):
    """A NaN or infinite value reached the recurrence."""


@dataclass(frozen=True)
class DelayNetwork:
    """Fixed linear memory of an LMU layer.

    Attributes
    ----------
    theta, dt : float
        Window length and discretisation step, in the same time units.
    d : int
        Memory order (number of Legendre coefficients kept).
    a_matrix, b_vector : ndarray
        Continuous-time state matrix ``(d, d)`` and input vector ``(d,)``.
    a_bar, b_bar : ndarray
        Euler-discretised counterparts.
    """

    theta: float
    dt: float
    d: int
    a_matrix: np.ndarray = field(repr=False)
    b_vector: np.ndarray = field(repr=False)
    a_bar: np.ndarray = field(repr=False)
    b_bar: np.ndarray = field(repr=False)

    @property
    def window_steps(self) -> float:
        """Number of discrete steps covered by a decode at ``theta_prime = theta``."""
        return self.theta ** 2 / self.dt


def build_delay_network(theta: float, dt: float = 1.0, d: int = 1) -> DelayNetwork:
    """Construct the Pade-approximant delay network and its discretisation.

    Raises
    ------
    ValueError
        If ``theta``, ``dt`` or ``d`` is not positive, or ``dt > theta``
        (the Euler step would be unstable).
    """
    if not theta > 0:
        raise ValueError(f"non-positive window theta={theta}")
    if not dt > 0:
        raise ValueError(f"non-positive step dt={dt}")
    if int(d) != d or d < 1:
        raise ValueError(f"memory order must be a positive integer, got d={d}")
    if dt > theta:
        raise ValueError(f"dt={dt} exceeds theta={theta}; Euler step would be unstable")
    d = int(d)
    i = np.arange(d)[:, None]
    j = np.arange(d)[None, :]
    sign = np.where(i < j, -1.0, (-1.0) ** (i - j + 1))
    a = (2 * i + 1) / theta * sign
    b = (2 * np.arange(d) + 1) / theta * (-1.0) ** np.arange(d)
    ratio = dt / theta
    a_bar = ratio * a + np.eye(d)
    b_bar = ratio * b
    for arr in (a, b, a_bar, b_bar):
        arr.setflags(write=False)
    return DelayNetwork(float(theta), float(dt), d, a, b, a_bar, b_bar)


def legendre_shifted(i: int, r):
    """Shifted Legendre polynomial of degree ``i`` on ``[0, 1]``.

    Evaluated from the explicit binomial sum in exact rational arithmetic, so
    the result is the correctly rounded value for float ``r`` and exact for
    ``int``/``Fraction`` arguments.
    """
    if i < 0:
        raise ValueError("degree must be non-negative")
    exact = isinstance(r, (int, Fraction))
    rr = Fraction(r)
    if rr < 0 or rr > 1:
        raise ValueError(f"r={r} outside [0, 1]")
    total = sum(comb(i, j) * comb(i + j, j) * (-rr) ** j for j in range(i + 1))
    value = (-1) ** i * total
    return value if exact else float(value)


def decode_weights(d: int, r: float) -> np.ndarray:
    """Vector ``[P_0(r), ..., P_{d-1}(r)]`` used to read a delay from memory."""
    return np.array([legendre_shifted(i, r) for i in range(d)], dtype=float)


def decode_delay(dn: DelayNetwork, m, theta_prime: float) -> float:
    """Reconstruct the input delayed by ``theta_prime`` from a memory vector."""
    if not 0 <= theta_prime <= dn.theta:
        raise ValueError(f"theta_prime={theta_prime} outside [0, {dn.theta}]")
    m = np.asarray(m, dtype=float)
    if m.shape[-1] != dn.d:
        raise DimensionError(f"memory has {m.shape[-1]} entries, expected {dn.d}")
    return m @ decode_weights(dn.d, theta_prime / dn.theta)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def activate(name: str, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return _sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, h):
    """Derivative of the activation expressed through its output ``h``."""
    if name == "tanh":
        return 1.0 - h * h
    if name == "sigmoid":
        return h * (1.0 - h)
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class LmuParams:
    """Trainable encoders, kernels and affine output head of one LMU layer.

    ``memory=False`` turns the cell into a plain recurrent network: the
    encoders and memory kernel are held at zero and excluded from training.
    """

    e_x: np.ndarray
    e_h: np.ndarray
    e_m: np.ndarray
    w_x: np.ndarray
    w_h: np.ndarray
    w_m: np.ndarray
    output_weights: np.ndarray
    output_bias: np.ndarray
    hidden_activation: str = "tanh"
    memory: bool = True

    def __post_init__(self):
        for name in TRAINABLE:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        p, n, d = self.e_x.shape[0], self.e_h.shape[0], self.e_m.shape[0]
        expected = {
            "e_x": (p,), "e_h": (n,), "e_m": (d,),
            "w_x": (n, p), "w_h": (n, n), "w_m": (n, d),
            "output_weights": (n,), "output_bias": (),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )

    @property
    def n(self) -> int:
        return self.e_h.shape[0]

    @property
    def d(self) -> int:
        return self.e_m.shape[0]

    @property
    def input_size(self) -> int:
        return self.e_x.shape[0]

    @property
    def trainable(self) -> tuple[str, ...]:
        if self.memory:
            return TRAINABLE
        return ("w_x", "w_h", "output_weights", "output_bias")

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TRAINABLE}

    def updated(self, **arrays) -> "LmuParams":
        return replace(self, **arrays)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())

    @classmethod
    def initialize(cls, rng: np.random.Generator, n: int, d: int, input_size: int = 1,
                   activation: str = "tanh", memory: bool = True) -> "LmuParams":
        """Encoders ``e_x = 1``, ``e_h = e_m = 0``; kernels uniform in +-1/sqrt(fan_in)."""

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        w_x = uniform((n, input_size), input_size)
        w_h = uniform((n, n), n)
        w_m = uniform((n, d), d)
        out_w = uniform((n,), n)
        if not memory:
            w_m = np.zeros((n, d))
        return cls(
            e_x=np.ones(input_size) if memory else np.zeros(input_size),
            e_h=np.zeros(n), e_m=np.zeros(d),
            w_x=w_x, w_h=w_h, w_m=w_m,
            output_weights=out_w, output_bias=np.array(0.0),
            hidden_activation=activation, memory=memory,
        )


@dataclass
class LmuState:
    """Hidden and memory vectors plus optional per-step recordings.

    ``h`` and ``m`` may carry a leading batch axis.  When ``record`` is set,
    every :func:`step` appends to ``x_trace``, ``u_trace``, ``h_trace`` and
    ``m_trace`` the values it consumed or produced.
    """

    h: np.ndarray
    m: np.ndarray
    record: bool = False
    x_trace: Optional[list] = None
    u_trace: Optional[list] = None
    h_trace: Optional[list] = None
    m_trace: Optional[list] = None

    @classmethod
    def zeros(cls, n: int, d: int, batch: Optional[int] = None, record: bool = False) -> "LmuState":
        lead = () if batch is None else (batch,)
        state = cls(np.zeros(lead + (n,)), np.zeros(lead + (d,)), record=record)
        state.reset()
        return state

    def reset(self) -> None:
        self.h = np.zeros_like(self.h)
        self.m = np.zeros_like(self.m)
        if self.record:
            self.x_trace, self.u_trace, self.h_trace, self.m_trace = [], [], [], []

    @property
    def steps(self) -> int:
        return len(self.h_trace) if self.record else 0


def _check_compatible(state: LmuState, dn: DelayNetwork, params: LmuParams, x_t) -> None:
    if params.d != dn.d:
        raise DimensionError(f"params memory size {params.d} != delay network order {dn.d}")
    if state.h.shape[-1] != params.n or state.m.shape[-1] != dn.d:
        raise DimensionError("state shape does not match params")
    if x_t.shape[-1] != params.input_size:
        raise DimensionError(f"input has {x_t.shape[-1]} features, expected {params.input_size}")
    if not (np.all(np.isfinite(state.h)) and np.all(np.isfinite(state.m))):
        raise NonFiniteError("non-finite state")
    if not np.all(np.isfinite(x_t)):
        raise NonFiniteError("non-finite input")


def _advance(state: LmuState, dn: DelayNetwork, params: LmuParams, x_t: np.ndarray) -> None:
    u = x_t @ params.e_x + state.h @ params.e_h + state.m @ params.e_m
    m = state.m @ dn.a_bar.T + np.multiply.outer(u, dn.b_bar)
    z = x_t @ params.w_x.T + state.h @ params.w_h.T + m @ params.w_m.T
    h = activate(params.hidden_activation, z)
    if state.record:
        state.x_trace.append(x_t)
        state.u_trace.append(u)
        state.m_trace.append(m)
        state.h_trace.append(h)
    state.h, state.m = h, m


def step(state: LmuState, dn: DelayNetwork, params: LmuParams, x_t) -> LmuState:
    """Advance the cell one time step in place and return the state."""
    x_t = np.asarray(x_t, dtype=float)
    if x_t.ndim < state.h.ndim:
        x_t = x_t[..., None]
    _check_compatible(state, dn, params, x_t)
    _advance(state, dn, params, x_t)
    return state


def _as_sequence(window, input_size: int) -> np.ndarray:
    """Coerce to ``(L, p)`` or ``(B, L, p)``."""
    w = np.asarray(window, dtype=float)
    if input_size == 1 and (w.ndim == 1 or (w.ndim == 2 and w.shape[-1] != 1)):
        w = w[..., None]
    if w.ndim not in (2, 3) or w.shape[-1] != input_size:
        raise DimensionError(f"window shape {w.shape} incompatible with input size {input_size}")
    if w.shape[-2] < 1:
        raise ValueError("empty window")
    return w


def run_sequence(dn: DelayNetwork, params: LmuParams, window, record: bool = False):
    """Feed a window from zero state; returns ``(final_h, state)``.

    ``window`` may be a single sequence ``(L,)``/``(L, p)`` or a batch
    ``(B, L)``/``(B, L, p)``.
    """
    seq = _as_sequence(window, params.input_size)
    if not np.all(np.isfinite(seq)):
        raise NonFiniteError("window contains non-finite values")
    if params.d != dn.d:
        raise DimensionError(f"params memory size {params.d} != delay network order {dn.d}")
    batch = seq.shape[0] if seq.ndim == 3 else None
    state = LmuState.zeros(params.n, dn.d, batch=batch, record=record)
    for t in range(seq.shape[-2]):
        _advance(state, dn, params, seq[..., t, :])
    return state.h, state


def forward_window(dn: DelayNetwork, params: LmuParams, window, record: bool = False):
    """One-step-ahead forecast from a window (or batch of windows).

    Returns ``(prediction, state)``; ``prediction`` is a float for a single
    window and an array of shape ``(B,)`` for a batch.
    """
    h, state = run_sequence(dn, params, window, record=record)
    pred = h @ params.output_weights + params.output_bias
    return (float(pred) if np.ndim(pred) == 0 else pred), state

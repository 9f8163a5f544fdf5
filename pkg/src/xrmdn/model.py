"""Weights and forward passes of the three coupled recurrent sub-networks.

Each sub-network maps an input vector and one recurrent scalar per mixture
component to a pre-activation per component::

    z_i = w_i[0]   * (A[0] . x + a[0])
        + sum_k    w_i[k] * tanh(A[k] . x + a[k])            k = 1..K-1
        + w_i[K]   * (B[0] * r_i + b[0])
        + sum_k    w_i[K+k] * tanh(B[k] * r_i + b[k])        k = 1..K-1
        + w_i0

The weight network feeds ``z`` through a softmax, the mean network uses it
as is, and the variance network takes the previous squared residual as its
only input and applies :func:`~xrmdn.mathkernel.pelu`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .errors import ConfigError
from .mathkernel import ActivationConfig, MixtureForecast, pelu

__all__ = [
    "SubnetParams",
    "XrmdnModel",
    "RecurrentState",
    "MixtureForecast",
    "init_model",
    "init_subnet",
    "subnet_forward",
    "xrmdn_step",
    "expected_demand",
    "residual",
    "advance_state",
    "initial_state",
    "rollout",
]


@dataclass
class SubnetParams:
    """Weights of one sub-network.

    ``in_w``/``in_b`` hold the K input units (row 0 is the direct linear
    unit, rows 1..K-1 feed tanh). ``rec_w``/``rec_b`` are the K units on the
    recurrent scalar with the same split; they are empty for a
    non-recurrent head. ``mix_w`` has one row of output weights per
    component over all hidden units, ``mix_b`` the output biases.
    """

    in_w: np.ndarray
    in_b: np.ndarray
    rec_w: np.ndarray
    rec_b: np.ndarray
    mix_w: np.ndarray
    mix_b: np.ndarray

    BLOCKS = ("in_w", "in_b", "rec_w", "rec_b", "mix_w", "mix_b")

    def __post_init__(self):
        for name in self.BLOCKS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        k, w = self.in_w.shape
        n = self.mix_b.shape[0]
        hidden = 2 * k if self.rec_w.size else k
        shapes_ok = (
            self.in_b.shape == (k,)
            and self.rec_w.shape in {(k,), (0,)}
            and self.rec_b.shape == self.rec_w.shape
            and self.mix_w.shape == (n, hidden)
        )
        if not shapes_ok:
            raise ConfigError(
                "inconsistent sub-network shapes: "
                + ", ".join(f"{b}={getattr(self, b).shape}" for b in self.BLOCKS)
            )

    @property
    def n_units(self) -> int:
        return self.in_w.shape[0]

    @property
    def input_width(self) -> int:
        return self.in_w.shape[1]

    @property
    def n_components(self) -> int:
        return self.mix_b.shape[0]

    @property
    def recurrent(self) -> bool:
        return self.rec_w.size > 0

    @property
    def n_params(self) -> int:
        return sum(getattr(self, b).size for b in self.BLOCKS)

    def blocks(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in self.BLOCKS:
            yield name, getattr(self, name)

    def zeros_like(self) -> "SubnetParams":
        return SubnetParams(*(np.zeros_like(a) for _, a in self.blocks()))

    def copy(self) -> "SubnetParams":
        return SubnetParams(*(a.copy() for _, a in self.blocks()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, a in self.blocks())


@dataclass
class XrmdnModel:
    """All trainable weights plus the dimensions they were built for."""

    wrnn: SubnetParams
    mrnn: SubnetParams
    vrnn: SubnetParams
    activation: ActivationConfig = field(default_factory=ActivationConfig)

    SUBNETS = ("wrnn", "mrnn", "vrnn")
    MAGIC = b"XRMD"

    def __post_init__(self):
        n, k, w = self.n_components, self.n_units, self.input_width
        for name in self.SUBNETS:
            p = getattr(self, name)
            if p.n_components != n or p.n_units != k:
                raise ConfigError(f"{name} has (N={p.n_components}, K={p.n_units}), expected (N={n}, K={k})")
        if self.mrnn.input_width != w:
            raise ConfigError(f"mrnn input width {self.mrnn.input_width} != wrnn input width {w}")
        if self.vrnn.input_width != 1 or not self.vrnn.recurrent:
            raise ConfigError("vrnn must be recurrent with a single (squared residual) input")
        if self.wrnn.recurrent != self.mrnn.recurrent:
            raise ConfigError("weight and mean networks must agree on having recurrent blocks")

    @property
    def n_components(self) -> int:
        return self.wrnn.n_components

    @property
    def n_units(self) -> int:
        return self.wrnn.n_units

    @property
    def input_width(self) -> int:
        return self.wrnn.input_width

    @property
    def n_params(self) -> int:
        return sum(p.n_params for p in self.subnets())

    def subnets(self) -> Iterator[SubnetParams]:
        for name in self.SUBNETS:
            yield getattr(self, name)

    def arrays(self) -> Iterator[np.ndarray]:
        """Every parameter block in declaration order."""
        for p in self.subnets():
            for _, a in p.blocks():
                yield a

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, vec: np.ndarray) -> "XrmdnModel":
        """Copy of this model with parameters read from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ConfigError(f"parameter vector has shape {vec.shape}, expected ({self.n_params},)")
        new, pos = {}, 0
        for name in self.SUBNETS:
            blocks = []
            for _, a in getattr(self, name).blocks():
                blocks.append(vec[pos:pos + a.size].reshape(a.shape).copy())
                pos += a.size
            new[name] = SubnetParams(*blocks)
        return replace(self, **new)

    def zeros_like(self) -> "XrmdnModel":
        return self.with_vector(np.zeros(self.n_params))

    def is_finite(self) -> bool:
        return all(p.is_finite() for p in self.subnets())


@dataclass(frozen=True)
class RecurrentState:
    """Outputs carried from the previous step, plus the last squared residual."""

    eta_prev: np.ndarray
    mu_prev: np.ndarray
    sigma2_prev: np.ndarray
    resid_prev: float = 0.0

    def __post_init__(self):
        for name in ("eta_prev", "mu_prev", "sigma2_prev"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))
        object.__setattr__(self, "resid_prev", float(self.resid_prev))

    def is_valid(self, tol: float = 1e-10) -> bool:
        return bool(
            np.all(self.eta_prev > 0)
            and abs(self.eta_prev.sum() - 1.0) <= tol
            and np.all(self.sigma2_prev > 0)
            and self.resid_prev >= 0
        )


def initial_state(n_components: int, mean: float, variance: float) -> RecurrentState:
    """Start-of-series state: uniform weights, demand mean and variance, no residual."""
    if variance <= 0:
        raise ConfigError(f"initial variance must be positive, got {variance}")
    n = n_components
    return RecurrentState(np.full(n, 1.0 / n), np.full(n, float(mean)), np.full(n, float(variance)), 0.0)


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_subnet(n_components: int, n_units: int, input_width: int, rng: np.random.Generator,
                recurrent: bool = True) -> SubnetParams:
    n, k, w = n_components, n_units, input_width
    hidden = 2 * k if recurrent else k
    in_w = _glorot(rng, (k, w), w, k)
    rec_w = _glorot(rng, (k,), 1, k) if recurrent else np.zeros(0)
    mix_w = _glorot(rng, (n, hidden), hidden, n)
    return SubnetParams(in_w, np.zeros(k), rec_w, np.zeros(rec_w.size), mix_w, np.zeros(n))


def _check_dims(n_components: int, n_units: int, input_width: int) -> None:
    if n_components < 1 or n_units < 2 or input_width < 1:
        raise ConfigError(
            f"need N >= 1, K >= 2, input width >= 1; got N={n_components}, K={n_units}, W={input_width}"
        )


def init_model(n_components: int, n_units: int, input_width: int, rng: np.random.Generator,
               activation: ActivationConfig | None = None) -> XrmdnModel:
    """Glorot-uniform weights per block, zero biases."""
    _check_dims(n_components, n_units, input_width)
    return XrmdnModel(
        wrnn=init_subnet(n_components, n_units, input_width, rng),
        mrnn=init_subnet(n_components, n_units, input_width, rng),
        vrnn=init_subnet(n_components, n_units, 1, rng),
        activation=activation or ActivationConfig(),
    )


# ---------------------------------------------------------------------------
# forward / backward kernels

def _subnet_forward(p: SubnetParams, x: np.ndarray, r: np.ndarray):
    """Pre-activations for all components plus the cache needed by backprop."""
    h_in = p.in_w @ x + p.in_b
    u_in = h_in.copy()
    u_in[1:] = np.tanh(h_in[1:])
    k = u_in.shape[0]
    z = p.mix_w[:, :k] @ u_in + p.mix_b
    u_rec = None
    if p.rec_w.size:
        u_rec = r[:, None] * p.rec_w + p.rec_b
        u_rec[:, 1:] = np.tanh(u_rec[:, 1:])
        z += (p.mix_w[:, k:] * u_rec).sum(axis=1)
    return z, (x, r, u_in, u_rec)


def _subnet_backward(p: SubnetParams, cache, gz: np.ndarray, g: SubnetParams):
    """Accumulate parameter gradients into ``g``; return (d/dx, d/dr)."""
    x, r, u_in, u_rec = cache
    k = u_in.shape[0]
    g.mix_b += gz
    g.mix_w[:, :k] += np.outer(gz, u_in)
    gh = p.mix_w[:, :k].T @ gz
    gh[1:] *= 1.0 - u_in[1:] ** 2
    g.in_w += np.outer(gh, x)
    g.in_b += gh
    gx = p.in_w.T @ gh
    if u_rec is None:
        return gx, np.zeros_like(r)
    g.mix_w[:, k:] += gz[:, None] * u_rec
    gh_rec = gz[:, None] * p.mix_w[:, k:]
    gh_rec[:, 1:] *= 1.0 - u_rec[:, 1:] ** 2
    g.rec_w += gh_rec.T @ r
    g.rec_b += gh_rec.sum(axis=0)
    gr = gh_rec @ p.rec_w
    return gx, gr


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _step(model: XrmdnModel, x: np.ndarray, eta_prev, mu_prev, sig_prev, resid_prev: float):
    """Shared forward step; returns (eta, mu, sigma2, cache)."""
    zw, cw = _subnet_forward(model.wrnn, x, eta_prev)
    zm, cm = _subnet_forward(model.mrnn, x, mu_prev)
    zv, cv = _subnet_forward(model.vrnn, np.array([resid_prev]), sig_prev)
    eta = _softmax(zw)
    sig = pelu(zv, model.activation)
    return eta, zm, sig, (cw, cm, cv, zv)


# ---------------------------------------------------------------------------
# public operations

def subnet_forward(params: SubnetParams, x, recurrent, component: int | None = None):
    """Pre-activation output of a sub-network before its output activation.

    ``recurrent`` holds one scalar per component (a scalar is broadcast).
    With ``component`` given the scalar for that component is returned,
    otherwise the full vector; softmax/pelu are left to the caller because
    softmax needs every component.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (params.input_width,):
        raise ConfigError(f"input has width {x.shape[0]}, sub-network expects {params.input_width}")
    r = np.broadcast_to(np.asarray(recurrent, dtype=np.float64), (params.n_components,))
    z, _ = _subnet_forward(params, x, np.array(r))
    return float(z[component]) if component is not None else z


def xrmdn_step(model: XrmdnModel, x, state: RecurrentState) -> MixtureForecast:
    """One-step-ahead mixture forecast from the current input and carried state."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.input_width,):
        raise ConfigError(f"input has width {x.shape}, model expects ({model.input_width},)")
    eta, mu, sig, _ = _step(model, x, state.eta_prev, state.mu_prev, state.sigma2_prev, state.resid_prev)
    return MixtureForecast(eta, mu, sig)


def expected_demand(forecast: MixtureForecast) -> float:
    return float(forecast.weights @ forecast.means)


def residual(forecast: MixtureForecast, observed: float) -> float:
    """Squared gap between the mixture mean and the observed demand."""
    return (expected_demand(forecast) - float(observed)) ** 2


def advance_state(state: RecurrentState, forecast: MixtureForecast, observed: float) -> RecurrentState:
    return RecurrentState(forecast.weights, forecast.means, forecast.variances, residual(forecast, observed))


def rollout(model: XrmdnModel, inputs: np.ndarray, observed: np.ndarray,
            state: RecurrentState) -> tuple[list[MixtureForecast], RecurrentState]:
    """Feed ``inputs[t]`` and score against ``observed[t]`` (the next demand).

    Returns the forecast for every step and the state after the last one.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] != observed.shape[0]:
        raise ConfigError(f"inputs {inputs.shape} and observed {observed.shape} do not line up")
    if inputs.shape[1] != model.input_width:
        raise ConfigError(f"inputs have width {inputs.shape[1]}, model expects {model.input_width}")
    eta, mu, sig, resid = state.eta_prev, state.mu_prev, state.sigma2_prev, state.resid_prev
    out = []
    for x, y in zip(inputs, observed):
        eta, mu, sig, _ = _step(model, x, eta, mu, sig, resid)
        resid = (eta @ mu - y) ** 2
        out.append(MixtureForecast(eta, mu, sig))
    return out, RecurrentState(eta, mu, sig, resid)

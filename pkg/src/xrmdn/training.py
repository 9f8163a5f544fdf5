"""Negative log-likelihood training with truncated backpropagation and Adam.

A training series is walked in consecutive segments. The first segment of
every epoch starts from the initial state (uniform weights, the demand mean
and variance, zero residual); each later segment starts from the values
left by the previous one. Gradients flow through every step of a segment,
including the squared residual that couples the mean and weight outputs
into the next variance step, and stop at segment boundaries.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal

import numpy as np

from .errors import ConfigError, DataError, TrainingDivergedError, XrmdnError
from .mathkernel import LOG_2PI, ActivationConfig, make_rng, pelu_grad
from .model import (
    RecurrentState,
    XrmdnModel,
    _step,
    _subnet_backward,
    init_model,
    initial_state,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 50
    lookback_k: int = 144
    batch_len: int | None = None  # defaults to lookback_k
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    n_components: int = 2
    n_units: int = 8
    seed: int = 0
    grad_clip: float | None = 10.0
    activation: ActivationConfig = field(default_factory=ActivationConfig)
    update_per: Literal["batch", "epoch"] = "batch"
    early_stopping_patience: int | None = None
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_len is None:
            self.batch_len = self.lookback_k
        if isinstance(self.activation, dict):
            self.activation = ActivationConfig(**self.activation)
        problems = []
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1 (got {self.epochs})")
        if self.lookback_k < 1:
            problems.append(f"lookback_k must be >= 1 (got {self.lookback_k})")
        if self.n_components < 1 or self.n_units < 1:
            problems.append(f"n_components and n_units must be >= 1 (got {self.n_components}, {self.n_units})")
        if self.batch_len < 1:
            problems.append(f"batch_len must be >= 1 (got {self.batch_len})")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            problems.append(f"learning_rate must be positive (got {self.learning_rate})")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            problems.append("Adam needs 0 <= beta1, beta2 < 1 and eps > 0")
        if self.grad_clip is not None and not self.grad_clip > 0:
            problems.append(f"grad_clip must be positive or None (got {self.grad_clip})")
        if self.update_per not in ("batch", "epoch"):
            problems.append(f"update_per must be 'batch' or 'epoch' (got {self.update_per!r})")
        if self.early_stopping_patience is not None and self.early_stopping_patience < 1:
            problems.append("early_stopping_patience must be >= 1 when set")
        if not 0 < self.validation_fraction < 1:
            problems.append("validation_fraction must lie in (0, 1)")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0)


@dataclass
class TrainReport:
    epoch_nll: list[float]
    initial_nll: float
    final_nll: float
    seconds: float
    epochs_run: int
    norm_mean: float = 0.0
    norm_std: float = 1.0
    final_state: RecurrentState | None = None
    last_input: np.ndarray | None = None

    @property
    def improvement(self) -> float:
        """Relative drop of the per-step training NLL."""
        return (self.initial_nll - self.final_nll) / abs(self.initial_nll)

    def to_dict(self) -> dict:
        return {
            "epoch_nll": list(map(float, self.epoch_nll)),
            "initial_nll": float(self.initial_nll),
            "final_nll": float(self.final_nll),
            "improvement": float(self.improvement),
            "epochs_run": int(self.epochs_run),
            "seconds": float(self.seconds),
            "norm_mean": float(self.norm_mean),
            "norm_std": float(self.norm_std),
        }

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# loss and gradient

def _check_window(model: XrmdnModel, inputs, observed):
    inputs = np.asarray(inputs, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] != observed.shape[0] or observed.shape[0] < 1:
        raise DataError(f"window inputs {inputs.shape} and targets {observed.shape} do not line up")
    if inputs.shape[1] != model.input_width:
        raise ConfigError(f"inputs have width {inputs.shape[1]}, model expects {model.input_width}")
    return inputs, observed


def _forward_window(model: XrmdnModel, inputs, observed, state: RecurrentState, keep: bool):
    eta, mu, sig, resid = state.eta_prev, state.mu_prev, state.sigma2_prev, state.resid_prev
    loss = 0.0
    tape = []
    for x, y in zip(inputs, observed):
        eta, mu, sig, cache = _step(model, x, eta, mu, sig, resid)
        with np.errstate(divide="ignore"):
            lp = np.log(eta) - 0.5 * (LOG_2PI + np.log(sig)) - (y - mu) ** 2 / (2.0 * sig)
        top = lp.max()
        lse = top + math.log(np.exp(lp - top).sum())
        loss -= lse
        expect = eta @ mu
        resid = (expect - y) ** 2
        if keep:
            tape.append((cache, eta, mu, sig, np.exp(lp - lse), y, expect))
    return loss, tape, RecurrentState(eta, mu, sig, resid)


def nll(model: XrmdnModel, inputs, observed, state: RecurrentState) -> float:
    """Summed negative log-likelihood of ``observed`` under a rollout from ``state``."""
    inputs, observed = _check_window(model, inputs, observed)
    loss, _, _ = _forward_window(model, inputs, observed, state, keep=False)
    return float(loss)


def nll_and_grad(model: XrmdnModel, inputs, observed, state: RecurrentState):
    """Return ``(loss, gradient, final_state)`` for one window.

    The gradient is an :class:`XrmdnModel` holding d(loss)/d(parameter) in
    every block. ``state`` is treated as a constant.
    """
    inputs, observed = _check_window(model, inputs, observed)
    loss, tape, final = _forward_window(model, inputs, observed, state, keep=True)
    g = model.zeros_like()
    n = model.n_components
    g_eta_next = np.zeros(n)
    g_mu_next = np.zeros(n)
    g_sig_next = np.zeros(n)
    g_resid_next = 0.0
    for (cw, cm, cv, zv), eta, mu, sig, gamma, y, expect in reversed(tape):
        d_resid = 2.0 * (expect - y) * g_resid_next
        g_eta = g_eta_next + d_resid * mu
        g_mu = g_mu_next + d_resid * eta + gamma * (mu - y) / sig
        g_sig = g_sig_next + gamma * (0.5 / sig - 0.5 * (y - mu) ** 2 / sig**2)
        # loss term of the softmax backward is folded in as (eta - gamma)
        g_zw = eta * (g_eta - eta @ g_eta) + (eta - gamma)
        g_zv = g_sig * pelu_grad(zv, model.activation)
        _, g_eta_next = _subnet_backward(model.wrnn, cw, g_zw, g.wrnn)
        _, g_mu_next = _subnet_backward(model.mrnn, cm, g_mu, g.mrnn)
        gx, g_sig_next = _subnet_backward(model.vrnn, cv, g_zv, g.vrnn)
        g_resid_next = gx[0]
    return float(loss), g, final


def grad_nll(model: XrmdnModel, inputs, observed, state: RecurrentState) -> XrmdnModel:
    return nll_and_grad(model, inputs, observed, state)[1]


def clip_by_global_norm(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return grad
    norm = float(np.linalg.norm(grad))
    return grad * (max_norm / norm) if norm > max_norm else grad


def adam_update(model: XrmdnModel, grads: XrmdnModel, adam: AdamState,
                cfg: TrainConfig) -> tuple[XrmdnModel, AdamState]:
    """One bias-corrected Adam step, after optional global-norm clipping."""
    theta = model.to_vector()
    g = grads.to_vector() if isinstance(grads, XrmdnModel) else np.asarray(grads, dtype=np.float64)
    if g.shape != theta.shape or adam.m.shape != theta.shape or adam.v.shape != theta.shape:
        raise ConfigError(
            f"shape mismatch: params {theta.shape}, grads {g.shape}, moments {adam.m.shape}/{adam.v.shape}"
        )
    g = clip_by_global_norm(g, cfg.grad_clip)
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    step = adam.step + 1
    m = b1 * adam.m + (1.0 - b1) * g
    v = b2 * adam.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1**step)
    v_hat = v / (1.0 - b2**step)
    theta = theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return model.with_vector(theta), AdamState(m, v, step)


# ---------------------------------------------------------------------------
# training loop

def _segments(n_steps: int, batch_len: int) -> list[slice]:
    return [slice(i, min(i + batch_len, n_steps)) for i in range(0, n_steps, batch_len)]


def mean_nll(model: XrmdnModel, inputs, observed, state: RecurrentState) -> float:
    return nll(model, inputs, observed, state) / len(observed)


def fit(model: XrmdnModel, inputs: np.ndarray, observed: np.ndarray, init: RecurrentState,
        cfg: TrainConfig, on_epoch: Callable[[int, float], None] | None = None) -> tuple[XrmdnModel, TrainReport]:
    """Train ``model`` on already-normalized step arrays.

    ``inputs[t]`` is the network input at step t and ``observed[t]`` the
    demand it must forecast. Returns the trained model and a report whose
    ``final_state`` is the warm-up state for data following the series: the
    trained model rolled over the final batch, starting from the state that
    was carried into that batch during the last epoch.
    """
    inputs, observed = _check_window(model, inputs, observed)
    if cfg.early_stopping_patience is not None:
        n_val = max(1, int(round(len(observed) * cfg.validation_fraction)))
        if len(observed) - n_val < 1:
            raise DataError("series too short to hold out a validation segment")
        fit_x, fit_y = inputs[:-n_val], observed[:-n_val]
        val_x, val_y = inputs[-n_val:], observed[-n_val:]
    else:
        fit_x, fit_y, val_x, val_y = inputs, observed, None, None

    t0 = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        initial = mean_nll(model, inputs, observed, init)
    adam = AdamState.zeros(model.n_params)
    segments = _segments(len(fit_y), cfg.batch_len)
    epoch_nll: list[float] = []
    best = (math.inf, model, 0)
    entering = init
    for epoch in range(1, cfg.epochs + 1):
        state = init
        total = 0.0
        acc = np.zeros(model.n_params) if cfg.update_per == "epoch" else None
        for b, seg in enumerate(segments, start=1):
            if b == len(segments):
                entering = state
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grad, state = nll_and_grad(model, fit_x[seg], fit_y[seg], state)
            except XrmdnError as exc:
                raise TrainingDivergedError(epoch, b, str(exc)) from exc
            gvec = grad.to_vector()
            if not (math.isfinite(loss) and np.all(np.isfinite(gvec))):
                raise TrainingDivergedError(epoch, b)
            total += loss
            if acc is not None:
                acc += gvec
            else:
                model, adam = adam_update(model, gvec, adam, cfg)
                if not model.is_finite():
                    raise TrainingDivergedError(epoch, b, "non-finite parameters after update")
        if acc is not None:
            model, adam = adam_update(model, acc, adam, cfg)
            if not model.is_finite():
                raise TrainingDivergedError(epoch, len(segments), "non-finite parameters after update")
        epoch_nll.append(total / len(fit_y))
        log.debug("epoch %d mean nll %.6f", epoch, epoch_nll[-1])
        if on_epoch is not None:
            on_epoch(epoch, epoch_nll[-1])
        if val_x is not None:
            with np.errstate(over="ignore", invalid="ignore"):
                _, _, carried = _forward_window(model, fit_x, fit_y, init, keep=False)
                val = mean_nll(model, val_x, val_y, carried)
            if val < best[0]:
                best = (val, model, epoch)
            elif epoch - best[2] >= cfg.early_stopping_patience:
                log.info("early stop at epoch %d (best %d)", epoch, best[2])
                model = best[1]
                break

    with np.errstate(over="ignore", invalid="ignore"):
        final, _, _ = _forward_window(model, inputs, observed, init, keep=False)
        tail = slice(segments[-1].start, None)
        _, _, end_state = _forward_window(model, inputs[tail], observed[tail], entering, keep=False)
    final /= len(observed)
    if not math.isfinite(final):
        raise TrainingDivergedError(len(epoch_nll), len(segments), "non-finite loss of the trained model")
    report = TrainReport(
        epoch_nll=epoch_nll,
        initial_nll=initial,
        final_nll=final,
        seconds=time.perf_counter() - t0,
        epochs_run=len(epoch_nll),
        final_state=end_state,
    )
    return model, report


def window_inputs(rows: np.ndarray, window: int) -> np.ndarray:
    """Flatten each run of ``window`` consecutive rows, oldest first."""
    views = np.lib.stride_tricks.sliding_window_view(rows, window, axis=0)
    # sliding_window_view puts the window axis last; restore row-major order
    return np.ascontiguousarray(views.transpose(0, 2, 1)).reshape(views.shape[0], -1)


def prepare_series(dataset, n_components: int, min_len: int = 2, window: int = 1):
    """Normalized step arrays and the initial state for a dataset.

    Returns ``(inputs, observed, init_state, (mean, std), last_input)``.
    Each row of the series is ``[normalized demand_t, features_t]``;
    ``inputs[t]`` holds the ``window`` rows ending at a step and
    ``observed[t]`` the normalized demand one step later. ``last_input`` is
    the input that forecasts the step after the series ends.
    """
    if window < 1:
        raise ConfigError(f"input window must be >= 1, got {window}")
    min_len = max(min_len, window + 1)
    if len(dataset) < min_len:
        raise DataError(f"training series has {len(dataset)} records, need at least {min_len}")
    mean, std = dataset.norm_stats if dataset.norm_stats is not None else dataset.demand_stats()
    # a constant series has no spread to scale by; center it and start from unit variance
    std = std if std > 0 else 1.0
    dn = (dataset.demand - mean) / std
    rows = np.column_stack([dn, dataset.features])
    inputs = window_inputs(rows[:-1], window)
    observed = dn[window:]
    var = float(dn.var())
    init = initial_state(n_components, float(dn.mean()), var if var > 0 else 1.0)
    return inputs, observed, init, (mean, std), rows[-window:].ravel()


def train(dataset, cfg: TrainConfig, builder: Callable = init_model,
          window: int = 1) -> tuple[XrmdnModel, TrainReport]:
    """Initialize a model from ``cfg.seed`` and train it on ``dataset``.

    ``builder(n_components, n_units, input_width, rng, activation)`` creates
    the starting model; the default builds the full three-recurrence network.
    ``window`` is the number of consecutive rows flattened into one input.
    """
    inputs, observed, init, (mean, std), last = prepare_series(
        dataset, cfg.n_components, cfg.lookback_k + 1, window)
    rng = make_rng(cfg.seed)
    model = builder(cfg.n_components, cfg.n_units, inputs.shape[1], rng, cfg.activation)
    model, report = fit(model, inputs, observed, init, cfg)
    report.norm_mean, report.norm_std = float(mean), float(std)
    report.last_input = last
    return model, report

"""Comparators: the classic recurrent MDN, least-squares AR, and persistence.

The classic RMDN keeps only the variance recurrence; its weight and mean
heads are feed-forward on the flattened lookback window of
``[demand, features]`` rows. AR and persistence are point
forecasters; for likelihood and interval metrics they are given a Gaussian
predictive distribution with their in-sample residual variance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .mathkernel import ActivationConfig, MixtureForecast
from .model import XrmdnModel, _check_dims, init_subnet
from .training import TrainConfig, TrainReport, train


@dataclass
class ClassicRmdnModel(XrmdnModel):
    """Mixture network whose weight and mean heads have no recurrent blocks."""

    MAGIC = b"RMDN"

    def __post_init__(self):
        super().__post_init__()
        if self.wrnn.recurrent or self.mrnn.recurrent:
            raise ConfigError("classic RMDN weight/mean networks must not carry recurrent blocks")


def init_classic_rmdn(n_components: int, n_units: int, input_width: int, rng: np.random.Generator,
                      activation: ActivationConfig | None = None) -> ClassicRmdnModel:
    _check_dims(n_components, n_units, input_width)
    return ClassicRmdnModel(
        wrnn=init_subnet(n_components, n_units, input_width, rng, recurrent=False),
        mrnn=init_subnet(n_components, n_units, input_width, rng, recurrent=False),
        vrnn=init_subnet(n_components, n_units, 1, rng),
        activation=activation or ActivationConfig(),
    )


def train_classic_rmdn(dataset, cfg: TrainConfig) -> tuple[ClassicRmdnModel, TrainReport]:
    """Train on inputs made of the last ``cfg.lookback_k`` rows, flattened."""
    return train(dataset, cfg, builder=init_classic_rmdn, window=cfg.lookback_k)


@dataclass(frozen=True)
class ArModel:
    """``x_t = c0 + a_1 x_{t-1} + ... + a_p x_{t-p}`` fitted by least squares."""

    coef: np.ndarray  # (c0, a_1, ..., a_p)
    sigma2: float = 0.0
    ill_conditioned: bool = False

    @property
    def order(self) -> int:
        return self.coef.shape[0] - 1

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    def to_dict(self) -> dict:
        return {"order": self.order, "coef": self.coef.tolist(), "sigma2": self.sigma2,
                "ill_conditioned": self.ill_conditioned}


def _design(x: np.ndarray, p: int) -> np.ndarray:
    n = x.shape[0]
    lags = [x[p - i:n - i] for i in range(1, p + 1)]
    return np.column_stack([np.ones(n - p), *lags])


def fit_ar(series, order: int, jitter: float = 1e-9) -> ArModel:
    """Ordinary least squares via ridge-jittered normal equations."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if order < 1:
        raise ConfigError(f"AR order must be >= 1, got {order}")
    if x.size <= 2 * order:
        raise DataError(f"AR({order}) needs more than {2 * order} observations, got {x.size}")
    X = _design(x, order)
    y = x[order:]
    gram = X.T @ X
    cond = np.linalg.cond(gram)
    try:
        coef = np.linalg.solve(gram + jitter * np.eye(order + 1), X.T @ y)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"AR({order}) design is singular even after jitter") from exc
    if not np.all(np.isfinite(coef)):
        raise NumericalError(f"AR({order}) fit produced non-finite coefficients")
    ill = not cond < 1e10
    if ill:
        warnings.warn(f"AR({order}) design is ill-conditioned (cond={cond:.3g}); lag coefficients are arbitrary",
                      RuntimeWarning, stacklevel=2)
    resid = y - X @ coef
    return ArModel(coef, float(np.mean(resid**2)), ill)


def predict_ar(model: ArModel, history) -> float:
    """One-step forecast from the last ``order`` values of ``history``."""
    h = np.asarray(history, dtype=np.float64).ravel()
    p = model.order
    if h.size < p:
        raise DataError(f"AR({p}) forecast needs {p} past values, got {h.size}")
    return float(model.coef[0] + model.coef[1:] @ h[::-1][:p])


def ar_residuals(model: ArModel, series) -> np.ndarray:
    """In-sample one-step errors ``x_t - xhat_t`` for ``t = p .. n-1``."""
    x = np.asarray(series, dtype=np.float64).ravel()
    p = model.order
    if x.size <= p:
        raise DataError(f"need more than {p} observations for AR({p}) residuals, got {x.size}")
    return x[p:] - _design(x, p) @ model.coef


def ar_forecasts(model: ArModel, history, targets) -> list[MixtureForecast]:
    """Rolling one-step Gaussian forecasts of ``targets`` following ``history``."""
    full = np.concatenate([np.asarray(history, float).ravel(), np.asarray(targets, float).ravel()])
    start = len(full) - len(np.ravel(targets))
    if start < model.order:
        raise DataError(f"AR({model.order}) forecast needs {model.order} past values, got {start}")
    var = max(model.sigma2, np.finfo(float).tiny)
    preds = _design(full, model.order)[start - model.order:] @ model.coef
    return [MixtureForecast([1.0], [m], [var]) for m in preds]


def persistence(history) -> float:
    h = np.asarray(history, dtype=np.float64).ravel()
    if h.size == 0:
        raise DataError("persistence forecast needs at least one observation")
    return float(h[-1])


def persistence_forecasts(history, targets) -> list[MixtureForecast]:
    """Last-value forecasts with the variance of historical one-step changes."""
    h = np.asarray(history, dtype=np.float64).ravel()
    y = np.asarray(targets, dtype=np.float64).ravel()
    if h.size < 2:
        raise DataError("persistence needs at least two historical observations to size its variance")
    var = max(float(np.mean(np.diff(h) ** 2)), np.finfo(float).tiny)
    prev = np.concatenate([[h[-1]], y[:-1]])
    return [MixtureForecast([1.0], [m], [var]) for m in prev]

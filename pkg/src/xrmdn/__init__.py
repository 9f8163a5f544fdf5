"""Probabilistic one-step demand forecasting with three coupled recurrent
mixture-density sub-networks (weights, means, variances)."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DomainError,
    InvalidInputError,
    NumericalError,
    TrainingDivergedError,
    XrmdnError,
)
from .mathkernel import ActivationConfig, MixtureForecast, make_rng
from .model import RecurrentState, SubnetParams, XrmdnModel, init_model, xrmdn_step
from .training import TrainConfig, TrainReport, train

__all__ = [
    "ActivationConfig",
    "ConfigError",
    "DataError",
    "DomainError",
    "InvalidInputError",
    "MixtureForecast",
    "NumericalError",
    "RecurrentState",
    "SubnetParams",
    "TrainConfig",
    "TrainReport",
    "TrainingDivergedError",
    "XrmdnError",
    "XrmdnModel",
    "init_model",
    "make_rng",
    "train",
    "xrmdn_step",
]

"""Rolling trained models across held-out data and comparing them."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .baselines import ar_forecasts, fit_ar, persistence_forecasts, train_classic_rmdn
from .data import Dataset, format_timestamp
from .errors import ConfigError
from .mathkernel import MixtureForecast, make_rng
from .metrics import DEFAULT_PERCENTILES, EvalReport, evaluate_forecasts
from .model import RecurrentState, XrmdnModel, rollout
from .serialization import ModelContext
from .training import TrainConfig, TrainReport, train, window_inputs


def context_from_report(report: TrainReport) -> ModelContext:
    return ModelContext(report.norm_mean, report.norm_std, report.final_state, report.last_input)


def forecast_series(model: XrmdnModel, context: ModelContext,
                    dataset: Dataset) -> tuple[list[MixtureForecast], RecurrentState]:
    """One-step forecasts for every record of ``dataset``, in demand units.

    The series is assumed to continue directly after the training data the
    context was taken from; the first forecast uses the stored last input.
    Models fed a flattened window of rows get the window length from their
    input width.
    """
    row_width = dataset.n_features + 1
    if model.input_width % row_width or context.last_input.shape[0] != model.input_width:
        raise ConfigError(
            f"dataset provides {dataset.n_features} features (row width {row_width}) "
            f"but the model expects input width {model.input_width}"
        )
    window = model.input_width // row_width
    mean, std = context.norm_mean, context.norm_std
    dn = (dataset.demand - mean) / std
    rows = np.column_stack([dn, dataset.features])
    history = np.vstack([context.last_input.reshape(window, row_width), rows[:-1]])
    normed, state = rollout(model, window_inputs(history, window), dn, context.state)
    return [f.rescale(mean, std) for f in normed], state


def evaluate_model(model: XrmdnModel, context: ModelContext, test: Dataset, seed: int = 0,
                   percentiles: Sequence[float] = DEFAULT_PERCENTILES,
                   n_samples: int = 1000) -> tuple[EvalReport, list[dict]]:
    forecasts, _ = forecast_series(model, context, test)
    report, rows = evaluate_forecasts(test.demand, forecasts, make_rng(seed), percentiles, n_samples)
    _attach_time(rows, test)
    return report, rows


def _attach_time(rows: list[dict], dataset: Dataset) -> None:
    for row, ts in zip(rows, dataset.timestamps):
        row["timestamp"] = format_timestamp(ts)


def compare_models(train_set: Dataset, test_set: Dataset, cfg: TrainConfig, ar_order: int = 3,
                   percentiles: Sequence[float] = DEFAULT_PERCENTILES,
                   n_samples: int = 1000) -> dict:
    """Fit XRMDN, classic RMDN, AR and persistence on one split and score them
    on the test split with identical seeds. Leaderboard is sorted by LLV."""
    entries = {}
    for name, fitter in (("xrmdn", train), ("rmdn", train_classic_rmdn)):
        model, report = fitter(train_set, cfg)
        ev, _ = evaluate_model(model, context_from_report(report), test_set, cfg.seed, percentiles, n_samples)
        entries[name] = {**ev.to_dict(), "train_final_nll": report.final_nll}
    ar = fit_ar(train_set.demand, ar_order)
    baselines = {
        "ar": ar_forecasts(ar, train_set.demand, test_set.demand),
        "persistence": persistence_forecasts(train_set.demand, test_set.demand),
    }
    for name, fc in baselines.items():
        ev, _ = evaluate_forecasts(test_set.demand, fc, make_rng(cfg.seed), percentiles, n_samples)
        entries[name] = ev.to_dict()
    board = sorted(entries, key=lambda k: -entries[k]["llv"])
    return {
        "leaderboard": [{"model": k, "rank": i + 1, **entries[k]} for i, k in enumerate(board)],
        "n_train": len(train_set),
        "n_test": len(test_set),
    }

"""Point and probabilistic forecast metrics plus the Ljung-Box diagnostic."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, InvalidInputError
from .mathkernel import (
    MixtureForecast,
    chi_square_isf,
    chi_square_sf,
    empirical_interval,
    gmm_log_pdf,
    gmm_sample,
)

DEFAULT_PERCENTILES = (0.75, 0.90, 0.95)


def _paired(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y_true, dtype=np.float64).ravel()
    b = np.asarray(y_pred, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size == 0:
        raise InvalidInputError(f"need equal non-empty lengths, got {a.size} and {b.size}")
    return a, b


def mape(y_true, y_pred) -> float:
    """Mean absolute percentage error as a fraction (0.2 means 20%)."""
    a, b = _paired(y_true, y_pred)
    zeros = np.flatnonzero(a == 0)
    if zeros.size:
        raise DomainError(f"MAPE undefined: true demand is zero at indices {zeros.tolist()}")
    return float(np.mean(np.abs(a - b) / np.abs(a)))


def mae(y_true, y_pred) -> float:
    a, b = _paired(y_true, y_pred)
    return float(np.mean(np.abs(a - b)))


def rmse(y_true, y_pred) -> float:
    a, b = _paired(y_true, y_pred)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def llv(y_true, forecasts: Sequence[MixtureForecast]) -> float:
    """Summed log-likelihood of the observations (higher is better)."""
    y = np.asarray(y_true, dtype=np.float64).ravel()
    if y.size != len(forecasts):
        raise InvalidInputError(f"{y.size} observations for {len(forecasts)} forecasts")
    return float(sum(gmm_log_pdf(v, f) for v, f in zip(y, forecasts)))


def rejection_rate(y_true, samples: Sequence, p: float) -> float:
    """Fraction of steps whose observation falls outside the central ``p`` interval
    of that step's samples."""
    y = np.asarray(y_true, dtype=np.float64).ravel()
    if y.size == 0 or y.size != len(samples):
        raise InvalidInputError(f"{y.size} observations for {len(samples)} sample sets")
    misses = 0
    for v, s in zip(y, samples):
        lo, hi = empirical_interval(s, p)
        misses += not (lo <= v <= hi)
    return misses / y.size


def acf(x, max_lag: int) -> np.ndarray:
    """Sample autocorrelations ``rho[0..max_lag]`` (biased denominator)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    n = x.size
    if max_lag < 0 or n <= max_lag:
        raise InvalidInputError(f"series of length {n} too short for lag {max_lag}")
    d = x - x.mean()
    denom = float(d @ d)
    if not denom > 0:
        raise DomainError("autocorrelation undefined for a constant series")
    return np.array([1.0] + [float(d[k:] @ d[:n - k]) / denom for k in range(1, max_lag + 1)])


@dataclass(frozen=True)
class LjungBoxResult:
    lags: int
    q_stat: float
    p_value: float

    def rejects(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha


def ljung_box(residuals, lags: int, squared: bool = True) -> LjungBoxResult:
    """Ljung-Box portmanteau test on the (by default squared) residuals.

    A small p-value rejects "no autocorrelation"; on squared residuals that
    indicates conditional heteroscedasticity.
    """
    r = np.asarray(residuals, dtype=np.float64).ravel()
    n = r.size
    if lags < 1 or n <= lags:
        raise InvalidInputError(f"need 1 <= lags < n, got lags={lags}, n={n}")
    series = r**2 if squared else r
    rho = acf(series, lags)[1:]
    q = n * (n + 2) * float(np.sum(rho**2 / (n - np.arange(1, lags + 1))))
    return LjungBoxResult(lags, q, chi_square_sf(q, lags))


def ljung_box_table(residuals, max_lag: int, squared: bool = True, alpha: float = 0.05) -> dict:
    """Per-lag statistics for ``h = 1..max_lag`` with chi-square critical values."""
    results = [ljung_box(residuals, h, squared) for h in range(1, max_lag + 1)]
    return {
        "alpha": alpha,
        "squared": squared,
        "lags": [r.lags for r in results],
        "critical_values": [round(chi_square_isf(alpha, h), 3) for h in range(1, max_lag + 1)],
        "q_stat": [r.q_stat for r in results],
        "p_value": [r.p_value for r in results],
        "reject": [r.rejects(alpha) for r in results],
    }


@dataclass
class EvalReport:
    llv: float
    mape: float | None
    mae: float
    rmse: float
    rr: dict[float, float] = field(default_factory=dict)
    n_cases: int = 0

    def to_dict(self) -> dict:
        return {
            "llv": self.llv,
            "mape": self.mape,
            "mae": self.mae,
            "rmse": self.rmse,
            "rr": {f"{p:g}": v for p, v in self.rr.items()},
            "n_cases": self.n_cases,
        }

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True)


def evaluate_forecasts(y_true, forecasts: Sequence[MixtureForecast], rng: np.random.Generator,
                       percentiles: Sequence[float] = DEFAULT_PERCENTILES,
                       n_samples: int = 1000) -> tuple[EvalReport, list[dict]]:
    """Score mixture forecasts; also return one row per step for plotting.

    MAPE is ``None`` when some true demand is zero.
    """
    y = np.asarray(y_true, dtype=np.float64).ravel()
    if y.size != len(forecasts) or y.size == 0:
        raise InvalidInputError(f"{y.size} observations for {len(forecasts)} forecasts")
    for p in percentiles:
        if not 0 < p < 1:
            raise InvalidInputError(f"percentile {p} outside (0, 1)")
    point = np.array([f.mean() for f in forecasts])
    samples = [gmm_sample(f, n_samples, rng) for f in forecasts]
    rows = []
    for t, (v, m, s) in enumerate(zip(y, point, samples)):
        row = {"step": t, "true": float(v), "expected": float(m)}
        for p in percentiles:
            lo, hi = empirical_interval(s, p)
            row[f"low_{p:g}"], row[f"high_{p:g}"] = lo, hi
        rows.append(row)
    try:
        mp = mape(y, point)
    except DomainError:
        mp = None
    report = EvalReport(
        llv=llv(y, forecasts),
        mape=mp,
        mae=mae(y, point),
        rmse=rmse(y, point),
        rr={p: rejection_rate(y, samples, p) for p in percentiles},
        n_cases=int(y.size),
    )
    return report, rows

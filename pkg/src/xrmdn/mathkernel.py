"""Numeric primitives: activations, Gaussian-mixture densities, sampling,
empirical intervals and the chi-square tail.

Everything here is a pure function of its arguments. Randomness is drawn
from an explicitly passed :class:`numpy.random.Generator` built on the
counter-based Philox bit generator (see :func:`make_rng`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, InvalidInputError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ActivationConfig:
    """Parameters of the positive ELU used on the variance output.

    ``xi`` is the strictly positive floor offset, ``alpha_elu`` scales the
    negative ELU branch.
    """

    xi: float = 1e-6
    alpha_elu: float = 1.0

    def __post_init__(self):
        if not (self.xi > 0 and math.isfinite(self.xi)):
            raise InvalidInputError(f"xi must be a positive finite real, got {self.xi!r}")
        if not (self.alpha_elu > 0 and math.isfinite(self.alpha_elu)):
            raise InvalidInputError(f"alpha_elu must be a positive finite real, got {self.alpha_elu!r}")

    @property
    def variance_floor(self) -> float:
        """Lower bound of :func:`pelu` over the reals."""
        return self.xi + max(1.0 - self.alpha_elu, 0.0)


@dataclass(frozen=True)
class MixtureForecast:
    """One-dimensional Gaussian mixture: component weights, means, variances."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        for name in ("weights", "means", "variances"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            object.__setattr__(self, name, arr)
        n = self.weights.shape[0]
        if self.weights.ndim != 1 or self.means.shape != (n,) or self.variances.shape != (n,):
            raise InvalidInputError(
                "weights, means and variances must be 1-D vectors of equal length, got "
                f"{self.weights.shape}, {self.means.shape}, {self.variances.shape}"
            )

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def is_valid(self, variance_floor: float = 0.0, tol: float = 1e-10) -> bool:
        """True when weights lie on the simplex and variances clear the floor."""
        return bool(
            np.all(np.isfinite(self.weights))
            and np.all(np.isfinite(self.means))
            and np.all(np.isfinite(self.variances))
            and np.all(self.weights > 0)
            and abs(self.weights.sum() - 1.0) <= tol
            and np.all(self.variances > 0)
            and np.all(self.variances >= variance_floor)
        )

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def variance(self) -> float:
        """Total variance of the mixture (law of total variance)."""
        m = self.mean()
        return float(self.weights @ (self.variances + (self.means - m) ** 2))

    def rescale(self, loc: float, scale: float) -> "MixtureForecast":
        """Distribution of ``loc + scale * X`` where ``X`` follows this mixture."""
        return MixtureForecast(self.weights, self.means * scale + loc, self.variances * scale**2)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded counter-based generator; the same seed gives the same stream everywhere."""
    if seed < 0 or seed >= 2**64:
        raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(int(seed)))


def _require_finite(x, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{what} must be finite")
    return arr


def softmax(logits) -> np.ndarray:
    z = _require_finite(logits, "logits")
    if z.ndim != 1 or z.size == 0:
        raise InvalidInputError("softmax expects a non-empty 1-D vector")
    e = np.exp(z - z.max())
    return e / e.sum()


def elu(z, cfg: ActivationConfig = ActivationConfig()):
    z = _require_finite(z, "elu input")
    # expm1 on the clipped argument keeps the unused branch from overflowing
    out = np.where(z > 0, z, cfg.alpha_elu * np.expm1(np.minimum(z, 0.0)))
    return out if out.ndim else float(out)


def pelu(z, cfg: ActivationConfig = ActivationConfig()):
    """Positive ELU: ``elu(z) + 1 + xi``; strictly positive for finite input."""
    out = elu(z, cfg) + 1.0 + cfg.xi
    return out


def pelu_grad(z, cfg: ActivationConfig = ActivationConfig()):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z > 0, 1.0, cfg.alpha_elu * np.exp(np.minimum(z, 0.0)))


def gaussian_log_pdf(x, mu, sigma2):
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(~(sigma2 > 0)):
        raise DomainError("variance must be strictly positive")
    out = -0.5 * (LOG_2PI + np.log(sigma2)) - (np.asarray(x) - mu) ** 2 / (2.0 * sigma2)
    return out if np.ndim(out) else float(out)


def gmm_log_pdf(x, forecast: MixtureForecast):
    """Log density of the mixture at ``x`` (scalar or array) via log-sum-exp."""
    with np.errstate(divide="ignore"):
        log_w = np.log(forecast.weights)
    xa = np.asarray(x, dtype=np.float64)
    terms = log_w + gaussian_log_pdf(xa[..., None], forecast.means, forecast.variances)
    out = special.logsumexp(terms, axis=-1)
    return float(out) if xa.ndim == 0 else out


def gmm_sample(forecast: MixtureForecast, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` values: categorical component choice, then a Gaussian draw."""
    if n < 1:
        raise InvalidInputError(f"sample count must be >= 1, got {n}")
    # renormalize against round-off so Generator.choice accepts the vector
    p = forecast.weights / forecast.weights.sum()
    comp = rng.choice(forecast.n_components, size=n, p=p)
    return forecast.means[comp] + np.sqrt(forecast.variances[comp]) * rng.standard_normal(n)


def empirical_interval(samples, p: float) -> tuple[float, float]:
    """Equal-tailed central interval holding a fraction ``p`` of the samples.

    Quantiles interpolate linearly between neighbouring order statistics.
    """
    s = np.asarray(samples, dtype=np.float64)
    if s.size == 0:
        raise InvalidInputError("samples must be non-empty")
    if not 0.0 < p < 1.0:
        raise InvalidInputError(f"percentile must lie in (0, 1), got {p}")
    lo, hi = np.quantile(s, [(1.0 - p) / 2.0, (1.0 + p) / 2.0], method="linear")
    return float(lo), float(hi)


def chi_square_sf(q: float, h: int) -> float:
    """P(X >= q) for X ~ chi-square with ``h`` degrees of freedom."""
    if h < 1 or int(h) != h:
        raise DomainError(f"degrees of freedom must be a positive integer, got {h}")
    if not q >= 0:
        raise DomainError(f"chi-square statistic must be non-negative, got {q}")
    return float(special.gammaincc(h / 2.0, q / 2.0))


def chi_square_isf(alpha: float, h: int) -> float:
    """Critical value ``c`` with ``chi_square_sf(c, h) == alpha``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return float(2.0 * special.gammainccinv(h / 2.0, alpha))

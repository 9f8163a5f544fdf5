"""Demand datasets: CSV ingestion, feature encoding, splitting, normalization,
windowing and a synthetic ARMA-GARCH generator.

CSV layout::

    timestamp,demand,<feature columns...>
    2016-01-01T00:00:00Z,12,0.0,0.8333333333333334

Timestamps are RFC 3339 (naive values are read as UTC), numbers use a
decimal point. Records must be evenly spaced once sorted.
"""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .mathkernel import make_rng

PROFILES = {
    "nyc-taxi-10min": ("hour_of_day", "day_of_week"),
    "uci-bike-daily": (
        "season", "month", "hour_of_day", "day_of_week",
        "temp", "atemp", "humidity", "windspeed",
    ),
}
METEO_FIELDS = ("temp", "atemp", "hum", "windspeed")


@dataclass(frozen=True)
class DemandRecord:
    timestamp: datetime
    demand: float
    features: np.ndarray


@dataclass(frozen=True)
class Dataset:
    """Evenly spaced demand series with an encoded feature matrix.

    ``timestamps`` is ``datetime64[s]`` (UTC), ``features`` has shape
    ``(len, n_features)``. ``norm_stats`` holds the training-split
    ``(mean, std)`` of demand once the dataset has been split.
    """

    timestamps: np.ndarray
    demand: np.ndarray
    features: np.ndarray
    interval: int
    feature_names: tuple[str, ...] = ()
    norm_stats: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype="datetime64[s]"))
        object.__setattr__(self, "demand", np.asarray(self.demand, dtype=np.float64))
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1 and feats.size == 0:
            feats = feats.reshape(len(self.demand), 0)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        n = self.demand.shape[0]
        if self.timestamps.shape != (n,) or feats.ndim != 2 or feats.shape[0] != n:
            raise DataError(
                f"inconsistent dataset shapes: timestamps {self.timestamps.shape}, "
                f"demand {self.demand.shape}, features {feats.shape}"
            )
        if self.feature_names and len(self.feature_names) != feats.shape[1]:
            raise DataError(f"{len(self.feature_names)} feature names for {feats.shape[1]} feature columns")

    def __len__(self) -> int:
        return self.demand.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def records(self) -> Iterator[DemandRecord]:
        for ts, d, f in zip(self.timestamps, self.demand, self.features):
            yield DemandRecord(ts.astype(datetime).replace(tzinfo=timezone.utc), float(d), f)

    def demand_stats(self) -> tuple[float, float]:
        """Population mean and standard deviation of demand."""
        return float(self.demand.mean()), float(self.demand.std())

    def take(self, sl: slice) -> "Dataset":
        return replace(self, timestamps=self.timestamps[sl], demand=self.demand[sl], features=self.features[sl])

    def equals(self, other: "Dataset") -> bool:
        return (
            np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.demand, other.demand)
            and np.array_equal(self.features, other.features)
            and self.interval == other.interval
            and self.feature_names == other.feature_names
        )


# ---------------------------------------------------------------------------
# CSV

@dataclass(frozen=True)
class CsvSchema:
    """Column roles. ``features=None`` takes every remaining column."""

    timestamp: str = "timestamp"
    demand: str = "demand"
    features: tuple[str, ...] | None = None
    profile: str | None = None


def load_schema(path: str | Path) -> CsvSchema:
    """Read a key-value schema file (``timestamp = ...``, ``demand = ...``,
    ``features = a, b, c``, optional ``profile = ...``)."""
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[schema]\n" + text
    parser.read_string(text)
    sec = parser["schema"] if parser.has_section("schema") else parser[parser.sections()[0]]
    feats = sec.get("features")
    return CsvSchema(
        timestamp=sec.get("timestamp", "timestamp"),
        demand=sec.get("demand", "demand"),
        features=tuple(f.strip() for f in feats.split(",") if f.strip()) if feats is not None else None,
        profile=sec.get("profile"),
    )


def parse_timestamp(text: str) -> np.datetime64:
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt, "s")


def format_timestamp(ts: np.datetime64) -> str:
    return str(np.datetime_as_string(ts, unit="s")) + "Z"


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    return header, rows


def _column(header: list[str], name: str, path: Path) -> int:
    try:
        return header.index(name)
    except ValueError:
        raise DataError(f"{path}: column {name!r} not in header {header}") from None


def _finish(path, stamps, demand, feats, names) -> Dataset:
    order = np.argsort(stamps, kind="stable")
    stamps = stamps[order]
    if len(stamps) == 0:
        raise DataError(f"{path}: no data rows")
    steps = np.diff(stamps).astype(np.int64)
    if np.any(steps == 0):
        i = int(np.flatnonzero(steps == 0)[0])
        raise DataError(f"{path}: duplicate timestamp {format_timestamp(stamps[i])}")
    interval = int(steps[0]) if len(steps) else 0
    bad = np.flatnonzero(steps != interval)
    if bad.size:
        i = int(bad[0])
        raise DataError(
            f"{path}: non-constant spacing, gap of {int(steps[i])} s between "
            f"{format_timestamp(stamps[i])} and {format_timestamp(stamps[i + 1])} (expected {interval} s)"
        )
    return Dataset(stamps, demand[order], feats[order], interval, tuple(names))


def load_csv(path: str | Path, schema: CsvSchema | None = None) -> Dataset:
    """Parse, sort and validate a demand CSV (features taken as already encoded)."""
    path = Path(path)
    schema = schema or CsvSchema()
    if schema.profile is not None:
        return load_profile_csv(path, schema.profile, schema=schema)
    header, rows = _read_rows(path)
    ti = _column(header, schema.timestamp, path)
    di = _column(header, schema.demand, path)
    names = schema.features
    if names is None:
        names = tuple(h for i, h in enumerate(header) if i not in (ti, di))
    fi = [_column(header, n, path) for n in names]

    missing = [n for n, r in enumerate(rows, start=2) if di >= len(r) or not r[di].strip()]
    if missing:
        raise DataError(f"{path}: missing demand on row(s) {missing}")
    stamps, demand, feats = [], [], []
    for lineno, r in enumerate(rows, start=2):
        try:
            stamps.append(parse_timestamp(r[ti]))
        except (ValueError, IndexError):
            raise DataError(f"{path}:{lineno}: malformed timestamp {r[ti] if ti < len(r) else ''!r}") from None
        try:
            d = float(r[di])
            f = [float(r[i]) for i in fi]
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}:{lineno}: malformed number ({exc})") from None
        if not math.isfinite(d) or d < 0:
            raise DataError(f"{path}:{lineno}: demand must be a non-negative finite number, got {r[di]!r}")
        demand.append(d)
        feats.append(f)
    return _finish(path, np.array(stamps, dtype="datetime64[s]"), np.array(demand),
                   np.array(feats, dtype=np.float64).reshape(len(rows), len(fi)), names)


def write_csv(dataset: Dataset, path: str | Path) -> None:
    """Write the canonical CSV; floats use ``repr`` so a reload is exact."""
    names = dataset.feature_names or tuple(f"f{i}" for i in range(dataset.n_features))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "demand", *names])
        for ts, d, f in zip(dataset.timestamps, dataset.demand, dataset.features):
            w.writerow([format_timestamp(ts), repr(float(d)), *(repr(float(v)) for v in f)])


# ---------------------------------------------------------------------------
# feature profiles

def _as_datetime(ts) -> datetime:
    if isinstance(ts, datetime):
        return ts
    if isinstance(ts, np.datetime64):
        return ts.astype("datetime64[s]").astype(datetime)
    return parse_timestamp(str(ts)).astype(datetime)


def temporal_features(ts) -> list[float]:
    """``[hour/23, weekday/6]`` with Monday as weekday 0."""
    dt = _as_datetime(ts)
    return [dt.hour / 23.0, dt.weekday() / 6.0]


def encode_features(raw: Mapping, profile: str,
                    meteo_ranges: Mapping[str, tuple[float, float]] | None = None) -> np.ndarray:
    """Encode one row's raw fields into the profile's feature vector.

    ``nyc-taxi-10min`` needs ``timestamp`` only. ``uci-bike-daily`` also
    reads ``season`` (1-4), ``mnth`` (1-12), ``weekday`` (0-6, as in the
    UCI files), optional ``hr`` (else the timestamp hour) and the four
    meteorological fields, which are min-max scaled by ``meteo_ranges``.
    """
    if profile not in PROFILES:
        raise ConfigError(f"unknown feature profile {profile!r}; known: {sorted(PROFILES)}")
    if profile == "nyc-taxi-10min":
        return np.array(temporal_features(raw["timestamp"]))
    dt = _as_datetime(raw["timestamp"])
    hour = float(raw["hr"]) if raw.get("hr") not in (None, "") else dt.hour
    weekday = float(raw["weekday"]) if raw.get("weekday") not in (None, "") else (dt.weekday() + 1) % 7
    month = float(raw["mnth"]) if raw.get("mnth") not in (None, "") else dt.month
    season = float(raw["season"]) if raw.get("season") not in (None, "") else (dt.month % 12) // 3 + 1
    out = [(season - 1) / 3.0, (month - 1) / 11.0, hour / 23.0, weekday / 6.0]
    for name in METEO_FIELDS:
        v = float(raw[name])
        if meteo_ranges is not None:
            lo, hi = meteo_ranges[name]
            v = (v - lo) / (hi - lo) if hi > lo else 0.0
        out.append(v)
    return np.array(out)


PROFILE_SCHEMAS = {
    "nyc-taxi-10min": CsvSchema("timestamp", "demand", (), "nyc-taxi-10min"),
    "uci-bike-daily": CsvSchema("dteday", "cnt", None, "uci-bike-daily"),
}


def load_profile_csv(path: str | Path, profile: str, train_end=None,
                     schema: CsvSchema | None = None) -> Dataset:
    """Load a raw file and encode its features with a named profile.

    Meteorological ranges come from rows strictly before ``train_end``
    (all rows when ``None``) so the test split never informs the scaling.
    """
    if profile not in PROFILES:
        raise ConfigError(f"unknown feature profile {profile!r}; known: {sorted(PROFILES)}")
    path = Path(path)
    base = PROFILE_SCHEMAS[profile]
    ts_col = schema.timestamp if schema and schema.timestamp != "timestamp" else base.timestamp
    d_col = schema.demand if schema and schema.demand != "demand" else base.demand
    header, rows = _read_rows(path)
    ti, di = _column(header, ts_col, path), _column(header, d_col, path)
    missing = [n for n, r in enumerate(rows, start=2) if di >= len(r) or not r[di].strip()]
    if missing:
        raise DataError(f"{path}: missing demand on row(s) {missing}")
    raw_rows, stamps, demand = [], [], []
    for lineno, r in enumerate(rows, start=2):
        try:
            ts = parse_timestamp(r[ti])
            d = float(r[di])
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}:{lineno}: malformed row ({exc})") from None
        if d < 0 or not math.isfinite(d):
            raise DataError(f"{path}:{lineno}: demand must be non-negative, got {r[di]!r}")
        raw = dict(zip(header, r))
        raw["timestamp"] = ts
        raw_rows.append(raw)
        stamps.append(ts)
        demand.append(d)
    stamps = np.array(stamps, dtype="datetime64[s]")
    ranges = None
    if profile == "uci-bike-daily":
        mask = stamps < np.datetime64(_as_datetime(train_end), "s") if train_end is not None else np.ones(len(stamps), bool)
        if not mask.any():
            raise DataError(f"{path}: no rows before {train_end} to derive meteorological ranges")
        try:
            cols = {m: np.array([float(raw_rows[i][m]) for i in np.flatnonzero(mask)]) for m in METEO_FIELDS}
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: bad meteorological column ({exc})") from None
        ranges = {m: (float(c.min()), float(c.max())) for m, c in cols.items()}
    try:
        feats = np.array([encode_features(r, profile, ranges) for r in raw_rows]).reshape(len(rows), -1)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: cannot encode {profile} features ({exc})") from None
    return _finish(path, stamps, np.array(demand), feats, PROFILES[profile])


# ---------------------------------------------------------------------------
# split / normalize / windows

def split(dataset: Dataset, boundary) -> tuple[Dataset, Dataset]:
    """Records before ``boundary`` train, the rest test; both carry train stats."""
    b = np.datetime64(_as_datetime(boundary), "s")
    cut = int(np.searchsorted(dataset.timestamps, b, side="left"))
    if cut == 0 or cut == len(dataset):
        raise DataError(
            f"split at {format_timestamp(b)} leaves an empty side "
            f"(data spans {format_timestamp(dataset.timestamps[0])} .. {format_timestamp(dataset.timestamps[-1])})"
        )
    train = dataset.take(slice(0, cut))
    stats = train.demand_stats()
    return replace(train, norm_stats=stats), replace(dataset.take(slice(cut, None)), norm_stats=stats)


def split_last_days(dataset: Dataset, days: int = 1) -> tuple[Dataset, Dataset]:
    """Hold out the final ``days`` calendar days as the test split."""
    last_day = dataset.timestamps[-1].astype("datetime64[D]")
    return split(dataset, (last_day - np.timedelta64(days - 1, "D")).astype("datetime64[s]"))


def _stats(dataset: Dataset) -> tuple[float, float]:
    mean, std = dataset.norm_stats if dataset.norm_stats is not None else dataset.demand_stats()
    if not std > 0:
        raise DataError("cannot normalize with zero standard deviation")
    return mean, std


def normalize(dataset: Dataset) -> Dataset:
    """z-score demand with the attached training stats (or the dataset's own)."""
    mean, std = _stats(dataset)
    return replace(dataset, demand=(dataset.demand - mean) / std, norm_stats=(mean, std))


def denormalize_mean(x, stats: tuple[float, float]):
    return np.asarray(x) * stats[1] + stats[0]


def denormalize_var(v, stats: tuple[float, float]):
    return np.asarray(v) * stats[1] ** 2


def make_windows(dataset: Dataset, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 lookback windows and next-step targets.

    Returns ``(inputs, targets)`` with ``inputs[j]`` of shape ``(k, 1 + n_features)``
    holding ``[demand, features]`` rows ``j .. j+k-1`` and ``targets[j]`` the
    demand at ``j + k``.
    """
    n = len(dataset)
    if k < 1 or k >= n:
        raise DataError(f"lookback {k} needs a series longer than {k}, got {n} records")
    rows = np.column_stack([dataset.demand, dataset.features])
    idx = np.arange(n - k)[:, None] + np.arange(k)[None, :]
    return rows[idx], dataset.demand[k:].copy()


# ---------------------------------------------------------------------------
# synthetic ARMA-GARCH series

@dataclass(frozen=True)
class SyntheticConfig:
    """Seasonal ARMA(p, q) demand driven by GARCH(1,1) innovations.

    ``ar = (c0, a1, ..., ap)``, ``ma = (b1, ..., bq)``,
    ``garch = (gamma0, alpha1, beta1)``. With the defaults the ARMA part
    fluctuates around ``c0 / (1 - sum(a)) = 50``.
    """

    length: int = 2000
    ar: tuple[float, ...] = (20.0, 0.6)
    ma: tuple[float, ...] = (0.3,)
    garch: tuple[float, float, float] = (1.0, 0.25, 0.70)
    seasonal_amplitude: float = 20.0
    seasonal_period: int = 144
    interval: int = 600
    start: str = "2016-01-01T00:00:00Z"
    burn_in: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ar", tuple(float(v) for v in self.ar))
        object.__setattr__(self, "ma", tuple(float(v) for v in self.ma))
        object.__setattr__(self, "garch", tuple(float(v) for v in self.garch))
        g0, a1, b1 = self.garch if len(self.garch) == 3 else (None, None, None)
        problems = []
        if g0 is None:
            problems.append("garch must be (gamma0, alpha1, beta1)")
        else:
            if not g0 > 0:
                problems.append(f"gamma0 must be positive (got {g0})")
            if a1 < 0 or b1 < 0 or not a1 + b1 < 1:
                problems.append(f"need alpha1, beta1 >= 0 and alpha1 + beta1 < 1 (got {a1} + {b1})")
        if len(self.ar) < 1:
            problems.append("ar must hold at least the intercept c0")
        elif len(self.ar) > 1 and np.max(np.abs(_ar_roots(self.ar[1:]))) >= 1:
            problems.append(f"AR coefficients {self.ar[1:]} are not stationary")
        if self.length < 1 or self.burn_in < 0 or self.seasonal_period < 1 or self.interval < 1:
            problems.append("length, seasonal_period and interval must be positive, burn_in non-negative")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _ar_roots(a: Sequence[float]) -> np.ndarray:
    """Eigenvalues of the AR companion matrix (stationary iff all |.| < 1)."""
    p = len(a)
    comp = np.zeros((p, p))
    comp[0] = a
    comp[1:, :-1] = np.eye(p - 1)
    return np.linalg.eigvals(comp)


@dataclass(frozen=True)
class SyntheticPath:
    demand: np.ndarray
    arma: np.ndarray
    innovations: np.ndarray
    variances: np.ndarray


def simulate_arma_garch(cfg: SyntheticConfig) -> SyntheticPath:
    """Full simulated path after burn-in, before timestamps are attached."""
    rng = make_rng(cfg.seed)
    c0, a = cfg.ar[0], np.array(cfg.ar[1:])
    b = np.array(cfg.ma)
    g0, alpha, beta = cfg.garch
    p, q = len(a), len(b)
    total = cfg.length + cfg.burn_in
    m = max(p, q, 1)
    e = rng.standard_normal(total)
    # presample values: ARMA mean, zero shocks, unconditional variance
    x = np.full(m + total, c0 / (1.0 - a.sum()))
    eps = np.zeros(m + total)
    sig2 = np.full(m + total, g0 / (1.0 - alpha - beta))
    for t in range(m, m + total):
        sig2[t] = g0 + alpha * eps[t - 1] ** 2 + beta * sig2[t - 1]
        eps[t] = e[t - m] * math.sqrt(sig2[t])
        x[t] = c0 + a @ x[t - p:t][::-1] + b @ eps[t - q:t][::-1] + eps[t]
    x, eps, sig2 = x[m:], eps[m:], sig2[m:]
    keep = slice(cfg.burn_in, None)
    t_idx = np.arange(cfg.length)
    seasonal = cfg.seasonal_amplitude * np.sin(2.0 * np.pi * t_idx / cfg.seasonal_period)
    demand = np.maximum(seasonal + x[keep], 0.0)
    return SyntheticPath(demand, x[keep].copy(), eps[keep].copy(), sig2[keep].copy())


def gen_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Seeded synthetic demand with hour-of-day / day-of-week features."""
    path = simulate_arma_garch(cfg)
    start = parse_timestamp(cfg.start)
    stamps = start + np.arange(cfg.length) * np.timedelta64(cfg.interval, "s")
    feats = np.array([temporal_features(ts) for ts in stamps]).reshape(cfg.length, 2)
    return Dataset(stamps, path.demand, feats, cfg.interval, PROFILES["nyc-taxi-10min"])

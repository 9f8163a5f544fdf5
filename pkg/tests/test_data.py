import math
from dataclasses import replace
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xrmdn.baselines import ar_residuals, fit_ar
from xrmdn.data import (
    PROFILES,
    CsvSchema,
    Dataset,
    SyntheticConfig,
    denormalize_mean,
    denormalize_var,
    encode_features,
    format_timestamp,
    gen_synthetic,
    load_csv,
    load_profile_csv,
    load_schema,
    make_windows,
    normalize,
    parse_timestamp,
    simulate_arma_garch,
    split,
    split_last_days,
    temporal_features,
    write_csv,
)
from xrmdn.errors import ConfigError, DataError
from xrmdn.metrics import ljung_box

HEADER = "timestamp,demand,hour,dow\n"


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def ten_minute_rows(n, start="2016-01-01T00:00:00Z"):
    t0 = parse_timestamp(start)
    return [(format_timestamp(t0 + np.timedelta64(600 * i, "s")), float(i), 0.5, 0.25) for i in range(n)]


def as_csv(rows):
    return HEADER + "".join(f"{t},{d},{h},{w}\n" for t, d, h, w in rows)


def bike_day_csv(tmp_path):
    """Two years of daily rows shaped like the UCI ``day.csv`` file."""
    days = np.arange(np.datetime64("2011-01-01"), np.datetime64("2013-01-01"))
    rng = np.random.default_rng(0)
    lines = ["instant,dteday,season,yr,mnth,holiday,weekday,workingday,weathersit,temp,atemp,hum,windspeed,"
             "casual,registered,cnt"]
    for i, day in enumerate(days):
        dt = day.astype(object)
        season = (dt.month % 12) // 3 + 1
        temp, atemp, hum, wind = rng.uniform(0.05, 0.85, 4)
        cnt = int(rng.integers(500, 8000))
        lines.append(f"{i + 1},{day},{season},{dt.year - 2011},{dt.month},0,{(dt.weekday() + 1) % 7},1,1,"
                     f"{temp:.6f},{atemp:.6f},{hum:.6f},{wind:.6f},0,{cnt},{cnt}")
    return write(tmp_path, "\n".join(lines) + "\n", "day.csv")


class TestLoadCsv:
    def test_three_rows(self, tmp_path):
        d = load_csv(write(tmp_path, as_csv(ten_minute_rows(3))))
        assert len(d) == 3
        assert d.interval == 600
        assert d.feature_names == ("hour", "dow")
        np.testing.assert_array_equal(d.demand, [0.0, 1.0, 2.0])

    def test_shuffled_rows(self, tmp_path):
        rows = ten_minute_rows(6)
        shuffled = [rows[i] for i in (3, 0, 5, 1, 4, 2)]
        a = load_csv(write(tmp_path, as_csv(rows), "a.csv"))
        b = load_csv(write(tmp_path, as_csv(shuffled), "b.csv"))
        assert a.equals(b)

    def test_gap_named(self, tmp_path):
        rows = ten_minute_rows(5)
        del rows[2]
        with pytest.raises(DataError, match="gap of 1200 s between 2016-01-01T00:10:00Z and 2016-01-01T00:30:00Z"):
            load_csv(write(tmp_path, as_csv(rows)))

    def test_duplicate(self, tmp_path):
        rows = ten_minute_rows(3)
        with pytest.raises(DataError, match="duplicate"):
            load_csv(write(tmp_path, as_csv(rows + rows[:1])))

    def test_missing_demand_reports_rows(self, tmp_path):
        text = HEADER + "2016-01-01T00:00:00Z,1,0,0\n2016-01-01T00:10:00Z,,0,0\n2016-01-01T00:20:00Z,,0,0\n"
        with pytest.raises(DataError, match=r"row\(s\) \[3, 4\]"):
            load_csv(write(tmp_path, text))

    def test_malformed_locations(self, tmp_path):
        with pytest.raises(DataError, match=":3: malformed timestamp"):
            load_csv(write(tmp_path, HEADER + "2016-01-01T00:00:00Z,1,0,0\nyesterday,2,0,0\n"))
        with pytest.raises(DataError, match=":2: malformed number"):
            load_csv(write(tmp_path, HEADER + "2016-01-01T00:00:00Z,1,zero,0\n"))
        with pytest.raises(DataError, match="non-negative"):
            load_csv(write(tmp_path, HEADER + "2016-01-01T00:00:00Z,-1,0,0\n"))

    def test_missing_file_and_column(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(tmp_path / "nope.csv")
        with pytest.raises(DataError, match="column 'count'"):
            load_csv(write(tmp_path, as_csv(ten_minute_rows(2))), CsvSchema(demand="count"))

    def test_schema_file(self, tmp_path):
        csv_path = write(tmp_path, "when,rides,dow,junk\n2016-01-01T00:00:00Z,4,0.5,x\n2016-01-01T01:00:00Z,5,0.5,y\n")
        schema = load_schema(write(tmp_path, "timestamp = when\ndemand = rides\nfeatures = dow\n", "s.ini"))
        d = load_csv(csv_path, schema)
        assert d.feature_names == ("dow",) and d.interval == 3600

    def test_round_trip_exact(self, tmp_path):
        d = gen_synthetic(SyntheticConfig(length=200, seed=4))
        path = tmp_path / "s.csv"
        write_csv(d, path)
        again = load_csv(path)
        assert again.equals(d)
        write_csv(again, tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_bytes() == path.read_bytes()

    def test_timezone_offsets(self):
        assert parse_timestamp("2016-01-01T01:00:00+01:00") == parse_timestamp("2016-01-01T00:00:00Z")


class TestFeatures:
    def test_bounds(self):
        assert temporal_features("2016-01-04T00:00:00Z") == [0.0, 0.0]  # a Monday at midnight
        assert temporal_features("2016-01-10T23:00:00Z") == [1.0, 1.0]  # a Sunday at 23:00

    def test_taxi_profile_width(self):
        out = encode_features({"timestamp": "2016-06-15T13:40:00Z"}, "nyc-taxi-10min")
        assert out.shape == (2,)
        np.testing.assert_allclose(out, [13 / 23, 2 / 6])

    def test_bike_profile_width(self):
        raw = {"timestamp": "2012-03-10", "season": "1", "mnth": "3", "weekday": "6",
               "temp": "0.3", "atemp": "0.25", "hum": "0.8", "windspeed": "0.1"}
        ranges = {"temp": (0.1, 0.5), "atemp": (0.0, 0.5), "hum": (0.0, 1.0), "windspeed": (0.1, 0.1)}
        out = encode_features(raw, "uci-bike-daily", ranges)
        assert out.shape == (8,) == (len(PROFILES["uci-bike-daily"]),)
        np.testing.assert_allclose(out, [0.0, 2 / 11, 0.0, 1.0, 0.5, 0.5, 0.8, 0.0])

    def test_unknown_profile(self):
        with pytest.raises(ConfigError):
            encode_features({"timestamp": "2016-01-01"}, "citibike")

    @given(st.datetimes(min_value=datetime(1990, 1, 1), max_value=datetime(2100, 1, 1)))
    def test_temporal_in_unit_interval(self, dt):
        assert all(0.0 <= v <= 1.0 for v in temporal_features(dt))

    def test_bike_file_split(self, tmp_path):
        path = bike_day_csv(tmp_path)
        d = load_profile_csv(path, "uci-bike-daily", train_end="2012-09-01")
        assert d.n_features == 8 and d.interval == 86400
        train, test = split(d, "2012-09-01")
        assert len(test) == 122
        # meteorological scaling uses the training rows only
        assert train.features[:, 4:].min() == 0.0 and train.features[:, 4:].max() == 1.0


class TestSplit:
    def test_last_day_of_ten_minute_data(self):
        d = gen_synthetic(SyntheticConfig(length=3 * 144, seed=0))
        train, test = split_last_days(d, 1)
        assert len(test) == 144
        assert len(train) == 288

    def test_partition_and_stats(self):
        d = gen_synthetic(SyntheticConfig(length=500, seed=1))
        train, test = split(d, d.timestamps[321])
        np.testing.assert_array_equal(np.concatenate([train.demand, test.demand]), d.demand)
        assert train.timestamps[-1] < test.timestamps[0]
        assert train.norm_stats == test.norm_stats == (float(d.demand[:321].mean()), float(d.demand[:321].std()))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 99))
    def test_partition_property(self, cut):
        d = gen_synthetic(SyntheticConfig(length=100, seed=2, burn_in=10))
        train, test = split(d, d.timestamps[cut])
        assert len(train) == cut and len(train) + len(test) == len(d)
        np.testing.assert_array_equal(np.concatenate([train.timestamps, test.timestamps]), d.timestamps)

    def test_empty_side(self):
        d = gen_synthetic(SyntheticConfig(length=50, seed=0))
        with pytest.raises(DataError):
            split(d, d.timestamps[0])
        with pytest.raises(DataError):
            split(d, d.timestamps[-1] + np.timedelta64(1, "s"))


class TestNormalize:
    def test_round_trip(self):
        d = gen_synthetic(SyntheticConfig(length=300, seed=3))
        n = normalize(d)
        np.testing.assert_allclose(denormalize_mean(n.demand, n.norm_stats), d.demand, rtol=0, atol=1e-12)
        m, s = n.norm_stats
        np.testing.assert_allclose(denormalize_var(np.ones(3), n.norm_stats), s**2)

    def test_train_split_standardized(self):
        d = gen_synthetic(SyntheticConfig(length=400, seed=5))
        train, _ = split(d, d.timestamps[300])
        n = normalize(train)
        assert abs(n.demand.mean()) < 1e-10
        assert abs(n.demand.std() - 1.0) < 1e-10

    def test_shift_invariant(self):
        d = gen_synthetic(SyntheticConfig(length=300, seed=6))
        shifted = replace(d, demand=d.demand + 1234.5)
        np.testing.assert_allclose(normalize(shifted).demand, normalize(d).demand, atol=1e-12)

    def test_zero_std(self):
        d = gen_synthetic(SyntheticConfig(length=20, seed=0))
        with pytest.raises(DataError):
            normalize(replace(d, demand=np.full(20, 3.0)))


class TestWindows:
    def ramp(self, n):
        stamps = parse_timestamp("2016-01-01T00:00:00Z") + np.arange(n) * np.timedelta64(600, "s")
        return Dataset(stamps, np.arange(1.0, n + 1), np.zeros((n, 0)), 600)

    def test_count(self):
        x, y = make_windows(self.ramp(5), 2)
        assert x.shape == (3, 2, 1) and y.shape == (3,)

    def test_ramp(self):
        x, y = make_windows(self.ramp(10), 3)
        np.testing.assert_array_equal(x[0, :, 0], [1, 2, 3])
        assert y[0] == 4 and y[-1] == 10

    def test_too_long(self):
        with pytest.raises(DataError):
            make_windows(self.ramp(5), 5)


class TestSynthetic:
    def test_deterministic(self):
        a = gen_synthetic(SyntheticConfig(length=300, seed=9))
        b = gen_synthetic(SyntheticConfig(length=300, seed=9))
        assert a.equals(b)
        assert not np.array_equal(a.demand, gen_synthetic(SyntheticConfig(length=300, seed=10)).demand)

    def test_homoscedastic_variance(self):
        path = simulate_arma_garch(SyntheticConfig(length=100_000, garch=(2.5, 0.0, 0.0), seed=0))
        assert path.innovations.var() == pytest.approx(2.5, rel=0.02)

    def test_variance_floor(self):
        cfg = SyntheticConfig(length=5000, seed=1)
        path = simulate_arma_garch(cfg)
        assert np.all(path.variances >= cfg.garch[0])

    def test_features_follow_timestamps(self):
        d = gen_synthetic(SyntheticConfig(length=300, seed=0))
        for i in (0, 77, 299):
            np.testing.assert_array_equal(d.features[i], temporal_features(d.timestamps[i]))
        assert np.all(d.demand >= 0)
        assert np.all(np.diff(d.timestamps).astype(int) == 600)

    def test_clamped_at_zero(self):
        d = gen_synthetic(SyntheticConfig(length=2000, ar=(0.0, 0.5), seasonal_amplitude=5.0, seed=0))
        assert d.demand.min() == 0.0

    def test_volatility_clustering_detected(self):
        d = gen_synthetic(SyntheticConfig(length=2000, seed=0))
        resid = ar_residuals(fit_ar(d.demand, 3), d.demand)
        for h in (3, 4, 5):
            assert ljung_box(resid, h).p_value < 0.05

    @pytest.mark.parametrize("kw", [dict(garch=(1.0, 0.5, 0.5)), dict(garch=(0.0, 0.1, 0.1)),
                                    dict(ar=(1.0, 1.2)), dict(garch=(1.0, 0.2)), dict(length=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SyntheticConfig(**kw)

    def test_record_view(self):
        d = gen_synthetic(SyntheticConfig(length=3, seed=0))
        recs = list(d.records())
        assert len(recs) == 3 and math.isclose(recs[1].demand, d.demand[1])

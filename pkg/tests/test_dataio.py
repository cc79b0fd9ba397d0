"""Loading, cleaning, splitting, windowing, and the synthetic fixture."""

from datetime import datetime, timedelta

import numpy as np
import pytest

from tsreprogram.dataio import (ABNORMAL_CAPACITY_FACTOR, SLOTS_PER_DAY,
                                PlantManifest, Segment, TimeSeries,
                                chronological_split, fill_missing_cubic,
                                limit_fraction, load_series, make_windows,
                                mark_abnormal, normalize_capacity, preprocess,
                                synth_plant, windows_within, write_series_csv)
from tsreprogram.errors import (ConfigError, DataError, EmptySetError,
                                ParseError)

MANIFEST = PlantManifest("T", 10.0, 117.0, 32.0)
T0 = datetime(2006, 5, 1, 8, 0)


def write_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("timestamp,power_mw\n")
        for ts, v in rows:
            fh.write(f"{ts.isoformat()},{v}\n")


def natural_spline_oracle(xs, ys, query):
    """Direct tridiagonal solve for natural cubic spline second derivatives."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n = len(xs)
    h = np.diff(xs)
    A = np.zeros((n, n))
    rhs = np.zeros(n)
    A[0, 0] = A[-1, -1] = 1.0
    for i in range(1, n - 1):
        A[i, i - 1] = h[i - 1]
        A[i, i] = 2.0 * (h[i - 1] + h[i])
        A[i, i + 1] = h[i]
        rhs[i] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1])
    m = np.linalg.solve(A, rhs)
    out = np.empty(len(query))
    for j, x in enumerate(query):
        i = min(np.searchsorted(xs, x, side="right") - 1, n - 2)
        dx1 = xs[i + 1] - x
        dx0 = x - xs[i]
        out[j] = (m[i] * dx1 ** 3 / (6 * h[i]) + m[i + 1] * dx0 ** 3 / (6 * h[i])
                  + (ys[i] / h[i] - m[i] * h[i] / 6) * dx1
                  + (ys[i + 1] / h[i] - m[i + 1] * h[i] / 6) * dx0)
    return out


class TestLoadSeries:
    def test_contiguous_rows(self, tmp_path):
        rows = [(T0 + timedelta(minutes=5 * i), 1.0 + i) for i in range(4)]
        write_csv(tmp_path / "t.csv", rows)
        s = load_series(tmp_path / "t.csv", MANIFEST)
        assert s.plant_id == "T"
        assert s.start == T0
        np.testing.assert_array_equal(s.values, [1.0, 2.0, 3.0, 4.0])
        assert s.gap_count == 0

    def test_gap_becomes_nan_slots(self, tmp_path):
        rows = [(T0, 1.0), (T0 + timedelta(minutes=20), 2.0)]
        write_csv(tmp_path / "t.csv", rows)
        s = load_series(tmp_path / "t.csv", MANIFEST)
        assert len(s) == 5
        assert s.gap_count == 3
        assert s.values[0] == 1.0 and s.values[4] == 2.0

    def test_header_required(self, tmp_path):
        (tmp_path / "t.csv").write_text("time,mw\n2006-05-01T08:00:00,1.0\n")
        with pytest.raises(ParseError) as e:
            load_series(tmp_path / "t.csv", MANIFEST)
        assert e.value.line == 1

    def test_bad_float(self, tmp_path):
        (tmp_path / "t.csv").write_text(
            "timestamp,power_mw\n2006-05-01T08:00:00,abc\n")
        with pytest.raises(ParseError) as e:
            load_series(tmp_path / "t.csv", MANIFEST)
        assert e.value.line == 2

    def test_field_count(self, tmp_path):
        (tmp_path / "t.csv").write_text(
            "timestamp,power_mw\n2006-05-01T08:00:00,1.0,extra\n")
        with pytest.raises(ParseError):
            load_series(tmp_path / "t.csv", MANIFEST)

    def test_non_monotonic(self, tmp_path):
        rows = [(T0 + timedelta(minutes=5), 1.0), (T0, 2.0)]
        write_csv(tmp_path / "t.csv", rows)
        with pytest.raises(DataError):
            load_series(tmp_path / "t.csv", MANIFEST)

    def test_off_grid(self, tmp_path):
        rows = [(T0, 1.0), (T0 + timedelta(minutes=7), 2.0)]
        write_csv(tmp_path / "t.csv", rows)
        with pytest.raises(DataError):
            load_series(tmp_path / "t.csv", MANIFEST)

    def test_empty_file(self, tmp_path):
        (tmp_path / "t.csv").write_text("timestamp,power_mw\n")
        with pytest.raises(DataError):
            load_series(tmp_path / "t.csv", MANIFEST)

    def test_write_read_round_trip(self, tmp_path):
        series = TimeSeries("T", T0, np.array([0.1, 0.25, 0.5]), normalized=True)
        write_series_csv(tmp_path / "t.csv", series, capacity_mw=10.0)
        back = load_series(tmp_path / "t.csv", MANIFEST)
        np.testing.assert_allclose(back.values, [1.0, 2.5, 5.0], atol=1e-8)


class TestPreprocessing:
    def test_mark_abnormal(self):
        cap = MANIFEST.capacity_mw
        vals = np.array([-0.1, 0.0, 5.0, cap * ABNORMAL_CAPACITY_FACTOR + 0.01,
                         cap * ABNORMAL_CAPACITY_FACTOR])
        s = mark_abnormal(TimeSeries("T", T0, vals), MANIFEST)
        assert np.isnan(s.values[0]) and np.isnan(s.values[3])
        assert s.values[1] == 0.0 and s.values[2] == 5.0 and s.values[4] == vals[4]

    def test_mark_abnormal_rejects_normalized(self):
        s = TimeSeries("T", T0, np.array([0.5]), normalized=True)
        with pytest.raises(DataError):
            mark_abnormal(s, MANIFEST)

    def test_normalize(self):
        s = normalize_capacity(TimeSeries("T", T0, np.array([5.0, 10.0])), 10.0)
        np.testing.assert_array_equal(s.values, [0.5, 1.0])
        assert s.normalized

    def test_fill_interior_matches_tridiagonal_oracle(self):
        rng = np.random.default_rng(5)
        vals = rng.uniform(0.1, 1.0, size=40)
        missing = [7, 8, 15, 22, 23, 24, 31]
        holed = vals.copy()
        holed[missing] = np.nan
        filled = fill_missing_cubic(TimeSeries("T", T0, holed))
        known = ~np.isnan(holed)
        xs = np.flatnonzero(known).astype(float)
        expected = natural_spline_oracle(xs, holed[known], np.array(missing, dtype=float))
        expected = np.maximum(expected, 0.0)
        np.testing.assert_allclose(filled.values[missing], expected, atol=1e-9)
        np.testing.assert_array_equal(filled.values[known], holed[known])

    def test_fill_edges_use_nearest(self):
        holed = np.array([np.nan, np.nan, 3.0, 4.0, 2.0, 6.0, np.nan])
        filled = fill_missing_cubic(TimeSeries("T", T0, holed))
        np.testing.assert_array_equal(filled.values[:2], [3.0, 3.0])
        assert filled.values[-1] == 6.0

    def test_fill_clips_negative(self):
        # steep V shape drives the spline below zero inside the gap
        holed = np.array([4.0, 0.1, np.nan, 0.1, 4.0, 8.0])
        filled = fill_missing_cubic(TimeSeries("T", T0, holed))
        assert filled.values[2] >= 0.0

    def test_fill_needs_four_points(self):
        with pytest.raises(DataError):
            fill_missing_cubic(TimeSeries("T", T0, np.array([1.0, np.nan, 2.0, 3.0])))

    def test_fill_no_gaps_is_identity(self):
        vals = np.array([1.0, 2.0, 3.0, 4.0])
        filled = fill_missing_cubic(TimeSeries("T", T0, vals))
        np.testing.assert_array_equal(filled.values, vals)

    def test_preprocess_pipeline(self):
        cap = MANIFEST.capacity_mw
        raw = np.array([2.0, 4.0, cap * 2.0, 8.0, 10.0, -1.0, 6.0, 4.0])
        out = preprocess(TimeSeries("T", T0, raw), MANIFEST)
        assert out.normalized
        assert out.gap_count == 0
        assert np.all((out.values >= 0.0) & (out.values <= 1.0))
        assert out.values[0] == pytest.approx(0.2)
        assert out.values[4] == pytest.approx(1.0)


class TestSplitting:
    def test_floor_rule_105(self):
        s = TimeSeries("T", T0, np.arange(105, dtype=float), normalized=True)
        bundle = chronological_split(s)
        assert bundle.lengths() == (73, 21, 11)

    def test_segments_are_chronological_and_disjoint(self):
        s = TimeSeries("T", T0, np.arange(50, dtype=float), normalized=True)
        b = chronological_split(s)
        train, val, test = b.train, b.val, b.test
        assert train.offset == 0
        assert val.offset == len(train)
        assert test.offset == len(train) + len(val)
        recon = np.concatenate([train.values, val.values, test.values])
        np.testing.assert_array_equal(recon, s.values)

    def test_fraction_validation(self):
        s = TimeSeries("T", T0, np.arange(10, dtype=float))
        with pytest.raises(ConfigError):
            chronological_split(s, 0.7, 0.2, 0.2)
        with pytest.raises(ConfigError):
            chronological_split(s, 1.0, -0.5, 0.5)

    def test_requires_gap_free(self):
        s = TimeSeries("T", T0, np.array([1.0, np.nan, 2.0]))
        with pytest.raises(DataError):
            chronological_split(s)

    def test_access_counters(self):
        s = TimeSeries("T", T0, np.arange(30, dtype=float))
        b = chronological_split(s)
        assert b.access_counts == {"train": 0, "val": 0, "test": 0}
        _ = b.train
        _ = b.test
        _ = b.test
        assert b.access_counts == {"train": 1, "val": 0, "test": 2}


class TestWindows:
    def seg(self, n=30, offset=100):
        return Segment("T", np.arange(n, dtype=float), offset, T0)

    def test_count_and_contents(self):
        w = make_windows(self.seg(), input_len=6, horizon=2, stride=4)
        assert len(w) == (30 - 8) // 4 + 1
        np.testing.assert_array_equal(w.inputs[0], np.arange(6.0))
        np.testing.assert_array_equal(w.targets[0], [6.0, 7.0])
        np.testing.assert_array_equal(w.inputs[1], np.arange(4.0, 10.0))
        assert w.origins[0] == 100 and w.origins[1] == 104

    def test_target_timestamps(self):
        w = make_windows(self.seg(offset=12), input_len=3, horizon=2, stride=1)
        ts = w.target_timestamps(0)
        assert ts[0] == T0 + timedelta(minutes=5 * 15)
        assert ts[1] == T0 + timedelta(minutes=5 * 16)

    def test_too_short_segment(self):
        with pytest.raises(EmptySetError):
            make_windows(self.seg(n=7), input_len=6, horizon=2)

    def test_param_validation(self):
        with pytest.raises(ConfigError):
            make_windows(self.seg(), input_len=0, horizon=2)
        with pytest.raises(ConfigError):
            make_windows(self.seg(), input_len=2, horizon=2, stride=0)

    def test_limit_fraction_ceiling(self):
        w = make_windows(self.seg(n=40), input_len=2, horizon=1, stride=1)
        assert len(w) == 38
        assert len(limit_fraction(w, 0.05)) == 2   # ceil(1.9)
        assert len(limit_fraction(w, 0.10)) == 4   # ceil(3.8)
        assert len(limit_fraction(w, 1.0)) == 38
        kept = limit_fraction(w, 0.10)
        np.testing.assert_array_equal(kept.origins, w.origins[:4])

    def test_limit_fraction_validation(self):
        w = make_windows(self.seg(), input_len=2, horizon=1)
        with pytest.raises(ConfigError):
            limit_fraction(w, 0.0)
        with pytest.raises(ConfigError):
            limit_fraction(w, 1.2)

    def test_windows_within(self):
        w = make_windows(self.seg(n=20, offset=50), input_len=4, horizon=2, stride=3)
        # origins 50..62, each window spanning 6 points, last one ending at 68
        assert windows_within(w, 50, 68)
        assert not windows_within(w, 51, 70)
        assert not windows_within(w, 50, 67)


class TestSynthPlant:
    def test_deterministic(self):
        a = synth_plant(seed=9, days=3)
        b = synth_plant(seed=9, days=3)
        np.testing.assert_array_equal(a.values, b.values)
        c = synth_plant(seed=10, days=3)
        assert not np.array_equal(a.values, c.values)

    def test_shape_and_range(self):
        s = synth_plant(seed=0, days=5)
        assert len(s) == 5 * SLOTS_PER_DAY
        assert s.normalized
        assert np.all((s.values >= 0.0) & (s.values <= 1.0))

    def test_night_is_zero_day_is_positive(self):
        s = synth_plant(seed=1, days=2, cloud_level=0.3)
        slot = np.arange(len(s)) % SLOTS_PER_DAY
        hour = slot * 5 / 60.0
        night = (hour <= 6.0) | (hour >= 18.0)
        assert np.all(s.values[night] == 0.0)
        assert np.all(s.values[~night] > 0.0)

    def test_clear_sky_is_smooth(self):
        s = synth_plant(seed=2, days=1, cloud_level=0.0)
        peak = s.values.max()
        assert peak == pytest.approx(s.values[SLOTS_PER_DAY // 2], rel=1e-6)
        # bell is symmetric around the noon slot
        np.testing.assert_allclose(s.values[73: 144], s.values[145: 216][::-1],
                                   atol=1e-12)

    def test_cloud_level_reduces_power(self):
        clear = synth_plant(seed=3, days=4, cloud_level=0.0)
        cloudy = synth_plant(seed=3, days=4, cloud_level=0.5)
        assert cloudy.values.sum() < clear.values.sum()
        assert np.all(cloudy.values <= clear.values + 1e-12)

    def test_validation(self):
        with pytest.raises(ConfigError):
            synth_plant(seed=0, days=0)
        with pytest.raises(ConfigError):
            synth_plant(seed=0, days=1, capacity_mw=0.0)

"""Metric oracles: loop-based reference within 1e-12, plus edge fixtures."""

import math

import numpy as np
import pytest

from tsreprogram.errors import DegenerateError, ShapeError
from tsreprogram.metrics import MetricsReport, mae, mse, r2, smape


def loop_mae(y, y_hat):
    return sum(abs(a - b) for a, b in zip(y, y_hat)) / len(y)


def loop_mse(y, y_hat):
    return sum((a - b) ** 2 for a, b in zip(y, y_hat)) / len(y)


def loop_r2(y, y_hat):
    mean = sum(y) / len(y)
    ss_tot = sum((a - mean) ** 2 for a in y)
    ss_res = sum((a - b) ** 2 for a, b in zip(y, y_hat))
    return 1.0 - ss_res / ss_tot


def loop_smape(y, y_hat):
    total = 0.0
    for a, b in zip(y, y_hat):
        denom = abs(a) + abs(b)
        if denom > 0.0:
            total += abs(a - b) / denom
    return 200.0 * total / len(y)


def test_matches_loop_reference_on_seeded_pairs():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        y = rng.normal(size=n)
        y_hat = y + rng.normal(scale=0.5, size=n)
        assert mae(y, y_hat) == pytest.approx(loop_mae(y, y_hat), abs=1e-12)
        assert mse(y, y_hat) == pytest.approx(loop_mse(y, y_hat), abs=1e-12)
        assert r2(y, y_hat)[0] == pytest.approx(loop_r2(y, y_hat), abs=1e-12)
        assert smape(y, y_hat) == pytest.approx(loop_smape(y, y_hat), abs=1e-12)


def test_smape_single_pair_is_100():
    assert smape([1.0], [3.0]) == pytest.approx(100.0, abs=1e-12)


def test_smape_zero_zero_contributes_zero():
    assert smape([0.0, 1.0], [0.0, 1.0]) == 0.0
    assert smape([0.0], [0.0]) == 0.0


def test_smape_one_sided_zero_is_200():
    assert smape([0.0], [0.5]) == pytest.approx(200.0, abs=1e-12)
    assert smape([0.5], [0.0]) == pytest.approx(200.0, abs=1e-12)


def test_smape_range():
    rng = np.random.default_rng(3)
    y = rng.normal(size=500)
    y_hat = rng.normal(size=500)
    assert 0.0 <= smape(y, y_hat) <= 200.0


def test_r2_of_mean_forecast_is_zero():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    y_hat = np.full(4, y.mean())
    raw, reported = r2(y, y_hat)
    assert raw == 0.0
    assert reported == 0.0


def test_r2_perfect_forecast():
    y = np.array([1.0, 2.0, 3.0])
    assert r2(y, y)[0] == 1.0


def test_r2_reported_clamps_negative():
    y = np.array([1.0, 2.0, 3.0])
    y_hat = np.array([10.0, -10.0, 10.0])
    raw, reported = r2(y, y_hat)
    assert raw < 0.0
    assert reported == 0.0


def test_r2_constant_truth_degenerate():
    with pytest.raises(DegenerateError):
        r2([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


def test_shape_guards():
    with pytest.raises(ShapeError):
        mae([1.0, 2.0], [1.0])
    with pytest.raises(ShapeError):
        mse([], [])
    with pytest.raises(ShapeError):
        mae(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        r2([1.0], [1.0])


def test_report_bundles_all_fields():
    y = np.array([0.0, 1.0, 2.0, 1.0])
    y_hat = np.array([0.0, 1.5, 1.5, 1.0])
    rep = MetricsReport.compute(y, y_hat)
    assert rep.n == 4
    assert rep.mae == pytest.approx(loop_mae(y, y_hat), abs=1e-12)
    assert rep.mse == pytest.approx(loop_mse(y, y_hat), abs=1e-12)
    assert rep.r2_raw == pytest.approx(loop_r2(y, y_hat), abs=1e-12)
    assert rep.r2_reported == max(0.0, rep.r2_raw)
    assert rep.smape == pytest.approx(loop_smape(y, y_hat), abs=1e-12)
    assert math.isfinite(rep.smape)

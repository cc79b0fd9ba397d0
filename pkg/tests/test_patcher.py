"""Patch partition algebra, embedding, and window standardization."""

import numpy as np
import pytest

import tsreprogram.numerics as nm
from tsreprogram.errors import ConfigError, ShapeError
from tsreprogram.patcher import (STD_FLOOR, PatchConfig, embed_patches,
                                 partition, window_destandardize,
                                 window_standardize)


class TestPartition:
    def test_count_formula_exhaustive(self):
        """floor((L - m)/s_d) + 1 over every legal (L, m, s_d) up to 64."""
        for L in range(1, 65):
            x = np.arange(L, dtype=float)
            for m in range(1, L + 1):
                for s_d in range(1, m + 1):
                    cfg = PatchConfig(m=m, s_d=s_d, d_model=2)
                    ps = partition(x, cfg)
                    assert ps.k == (L - m) // s_d + 1
                    assert ps.patches.shape == (ps.k, m)
                    # every patch is the contiguous slice at its stride offset
                    for i in range(ps.k):
                        np.testing.assert_array_equal(
                            ps.patches[i], x[i * s_d: i * s_d + m])

    def test_reference_case_24_16_8(self):
        x = np.arange(1.0, 25.0)
        ps = partition(x, PatchConfig(m=16, s_d=8, d_model=4))
        assert ps.k == 2
        np.testing.assert_array_equal(ps.patches[0], np.arange(1.0, 17.0))
        np.testing.assert_array_equal(ps.patches[1], np.arange(9.0, 25.0))

    def test_trailing_points_drop(self):
        ps = partition(np.arange(11.0), PatchConfig(m=4, s_d=3, d_model=2))
        assert ps.k == 3  # points 10 and beyond never appear
        assert ps.patches[-1][-1] == 9.0

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            PatchConfig(m=4, s_d=5, d_model=2)
        with pytest.raises(ConfigError):
            PatchConfig(m=4, s_d=0, d_model=2)
        with pytest.raises(ConfigError):
            PatchConfig(m=4, s_d=2, d_model=0)
        with pytest.raises(ConfigError):
            PatchConfig(m=8, s_d=2, d_model=2).patch_count(6)
        with pytest.raises(ShapeError):
            partition(np.zeros((3, 3)), PatchConfig(m=2, s_d=1, d_model=2))


class TestEmbedding:
    def test_affine_map_values(self, rng):
        cfg = PatchConfig(m=4, s_d=2, d_model=3)
        ps = partition(rng.normal(size=10), cfg)
        w = nm.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = nm.Tensor(rng.normal(size=3), requires_grad=True)
        e = embed_patches(ps, w, b)
        assert e.shape == (ps.k, 3)
        np.testing.assert_allclose(e.value, ps.patches @ w.value.T + b.value,
                                   atol=1e-12)

    def test_gradients_flow_to_weights(self, rng):
        cfg = PatchConfig(m=4, s_d=2, d_model=3)
        ps = partition(rng.normal(size=10), cfg)
        w = nm.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = nm.Tensor(rng.normal(size=3), requires_grad=True)
        report = nm.grad_check(
            lambda: nm.sum_all(nm.mul(embed_patches(ps, w, b),
                                      embed_patches(ps, w, b))),
            {"w": w, "b": b}, h=1e-5, tol=1e-6)
        assert report.passed, report.per_param

    def test_shape_guards(self, rng):
        ps = partition(rng.normal(size=8), PatchConfig(m=4, s_d=4, d_model=3))
        with pytest.raises(ShapeError):
            embed_patches(ps, nm.Tensor(np.zeros((3, 5))), nm.Tensor(np.zeros(3)))
        with pytest.raises(ShapeError):
            embed_patches(ps, nm.Tensor(np.zeros((3, 4))), nm.Tensor(np.zeros(2)))


class TestStandardization:
    def test_round_trip(self, rng):
        x = rng.normal(loc=0.3, scale=0.2, size=48)
        z, state = window_standardize(x)
        assert z.mean() == pytest.approx(0.0, abs=1e-12)
        assert z.std() == pytest.approx(1.0, rel=1e-9)
        np.testing.assert_allclose(window_destandardize(z, state), x, atol=1e-12)

    def test_constant_window_uses_floor(self):
        z, state = window_standardize(np.full(10, 0.25))
        np.testing.assert_array_equal(z, np.zeros(10))
        assert state.std == STD_FLOOR
        np.testing.assert_allclose(window_destandardize(z, state),
                                   np.full(10, 0.25), atol=1e-12)

    def test_shape_guard(self):
        with pytest.raises(ShapeError):
            window_standardize(np.array([1.0]))

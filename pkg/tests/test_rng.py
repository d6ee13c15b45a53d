"""Streams, Gumbel draws, Halton points and coefficient draws."""
from __future__ import annotations

import math

import numpy as np
import pytest

from netchoice.model import Family, MixingSpec, ThetaVector
from netchoice.rng import (
    Stream,
    derive_seed,
    draw_coefficients,
    gumbel_inverse_cdf,
    halton_sequence,
    open_uniform,
    sample_gumbel,
    triangular_from_uniform,
)


def box_discrepancy(points: np.ndarray, grid: int = 32) -> float:
    """Largest |empirical - Lebesgue| measure over anchored boxes [0,a)x[0,b) on a grid."""
    edges = np.arange(1, grid + 1) / grid
    worst = 0.0
    for a in edges:
        inside_a = points[:, 0] < a
        for b in edges:
            frac = np.mean(inside_a & (points[:, 1] < b))
            worst = max(worst, abs(frac - a * b))
    return worst


class TestStream:
    def test_same_seed_and_path_give_same_draws(self):
        a = Stream(7).child(3, 1).generator().random(5)
        b = Stream(7, (3, 1)).generator().random(5)
        np.testing.assert_array_equal(a, b)

    def test_children_are_distinct(self):
        a = Stream(7).child(0).generator().random(5)
        b = Stream(7).child(1).generator().random(5)
        assert not np.array_equal(a, b)

    def test_seed_bounds(self):
        Stream(2**64 - 1)
        with pytest.raises(ValueError):
            Stream(2**64)
        with pytest.raises(ValueError):
            Stream(-1)

    def test_derive_seed_is_stable_and_keyed(self):
        assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
        assert derive_seed(5, 1, 2) != derive_seed(5, 2, 1)
        assert 0 <= derive_seed(5) < 2**64

    def test_open_uniform_excludes_endpoints(self):
        u = open_uniform(Stream(0).generator(), 10**5)
        assert u.min() > 0 and u.max() < 1


class TestGumbel:
    def test_inverse_cdf_fixed_point(self):
        assert gumbel_inverse_cdf(1 / math.e) == pytest.approx(0.0, abs=1e-15)

    def test_moments(self):
        g = sample_gumbel(Stream(11), 10**6)
        assert abs(g.mean() - 0.5772156649) < 0.01
        assert abs(g.var() - math.pi**2 / 6) < 0.02

    def test_determinism_and_count(self):
        np.testing.assert_array_equal(sample_gumbel(3, 100), sample_gumbel(3, 100))
        assert sample_gumbel(3, 0).shape == (0,)
        with pytest.raises(ValueError):
            sample_gumbel(3, -1)


class TestHalton:
    def test_base_two(self):
        np.testing.assert_allclose(halton_sequence(1, 3)[:, 0], [1 / 2, 1 / 4, 3 / 4])

    def test_base_three(self):
        np.testing.assert_allclose(halton_sequence(2, 3)[:, 1], [1 / 3, 2 / 3, 1 / 9])

    def test_skip_shifts_the_sequence(self):
        np.testing.assert_array_equal(halton_sequence(3, 5, skip=10), halton_sequence(3, 15)[10:])

    def test_points_inside_unit_cube(self):
        h = halton_sequence(5, 1000)
        assert h.min() > 0 and h.max() < 1

    def test_lower_discrepancy_than_pseudo_random(self):
        n = 10**4
        d_halton = box_discrepancy(halton_sequence(2, n))
        d_pseudo = [box_discrepancy(Stream(s).generator().random((n, 2))) for s in range(20)]
        assert all(d_halton < d for d in d_pseudo)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            halton_sequence(0, 5)
        with pytest.raises(ValueError):
            halton_sequence(1, -1)


class TestDrawCoefficients:
    def test_fixed_is_exact(self):
        spec = MixingSpec(("fixed", "normal"))
        d = draw_coefficients(spec, ThetaVector((3.0, 0.0), (1.0,)), 50, Stream(0))
        assert np.all(d.draws[:, 0] == 3.0)

    def test_lognormal_median(self):
        spec = MixingSpec(("lognormal",))
        d = draw_coefficients(spec, ThetaVector((0.0,), (1.0,)), 10**5, Stream(1))
        assert 0.98 <= np.median(d.draws[:, 0]) <= 1.02

    def test_normal_moments(self):
        spec = MixingSpec(("normal",))
        d = draw_coefficients(spec, ThetaVector((3.0,), (2.0,)), 10**5, Stream(2))
        assert 2.98 <= d.draws[:, 0].mean() <= 3.02
        assert 1.97 <= d.draws[:, 0].std() <= 2.03

    def test_supports(self):
        spec = MixingSpec(("lognormal", "uniform", "triangular"))
        theta = ThetaVector((-2.0, 1.0, -1.0), (3.0, -0.5, 2.0))
        d = draw_coefficients(spec, theta, 10**5, Stream(3)).draws
        assert np.all(d[:, 0] > 0)
        assert np.all((d[:, 1] >= 0.5) & (d[:, 1] <= 1.5))
        assert np.all((d[:, 2] >= -3.0) & (d[:, 2] <= 1.0))

    def test_uniform_and_triangular_moments(self):
        spec = MixingSpec(("uniform", "triangular"))
        d = draw_coefficients(spec, ThetaVector((1.0, 0.0), (2.0, 1.0)), 10**5, Stream(4)).draws
        assert abs(d[:, 0].var() - 4.0 / 3.0) < 0.02
        assert abs(d[:, 1].var() - 1.0 / 6.0) < 0.005

    def test_correlation_fidelity(self):
        spec = MixingSpec(("normal", "normal"), correlated=True)
        theta = ThetaVector((0.0, 0.0), (1.0, 0.8), (0.6,))
        d = draw_coefficients(spec, theta, 10**6, Stream(5)).draws
        assert abs(np.corrcoef(d.T)[0, 1] - 0.6) < 0.01

    def test_bitwise_determinism_and_read_only(self):
        spec = MixingSpec(("normal", "lognormal"), correlated=True)
        theta = ThetaVector((1.0, 0.0), (1.0, 0.5), (0.3,))
        a = draw_coefficients(spec, theta, 200, Stream(6))
        b = draw_coefficients(spec, theta, 200, Stream(6))
        assert a.draws.tobytes() == b.draws.tobytes()
        with pytest.raises(ValueError):
            a.draws[0, 0] = 1.0

    def test_halton_scheme(self):
        spec = MixingSpec(("normal",))
        d = draw_coefficients(spec, ThetaVector((0.0,), (1.0,)), 1000, Stream(0), scheme="halton")
        assert d.generation == "halton"
        assert abs(d.draws.mean()) < 0.01

    def test_rejects_bad_arguments(self):
        spec = MixingSpec(("normal",))
        with pytest.raises(ValueError):
            draw_coefficients(spec, ThetaVector((0.0,), (1.0,)), 0, Stream(0))
        with pytest.raises(ValueError):
            draw_coefficients(spec, ThetaVector((0.0,)), 5, Stream(0))
        with pytest.raises(ValueError):
            draw_coefficients(spec, ThetaVector((0.0,), (1.0,)), 5, Stream(0), scheme="sobol")

    def test_triangular_inverse_cdf(self):
        np.testing.assert_allclose(triangular_from_uniform([0.5, 0.125, 0.875]), [0.0, -0.5, 0.5])

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spca.curve import PrincipalCurve
from spca.data import Dataset
from spca.errors import InvalidArgumentError, OutOfRangeError
from spca.metric import (MetricConfig, attach_density, density_at, inverse_metric_length,
                         knn_density_1d, metric_length, total_metric_length)


def straight_curve(length, step=0.5):
    """A horizontal polyline in 2-d from (0, 0) to (length, 0)."""
    m = int(round(length / step))
    x = np.linspace(0.0, length, m + 1)
    v = np.column_stack([x, np.zeros_like(x)])
    return PrincipalCurve(vertices=v, bases=np.repeat(np.eye(2)[None], len(v), axis=0),
                          eigenvalues=np.ones((len(v), 2)), axis_index=0, u=x.copy(), origin_index=0,
                          stop_reasons=(None, None))


def with_samples(curve, along, k=None):
    rng = np.random.default_rng(0)
    pts = np.column_stack([along, rng.normal(0, 0.1, len(along))])
    return attach_density(curve, Dataset(pts), MetricConfig(density_k=k))


@pytest.fixture(scope="module")
def uniform_curve():
    rng = np.random.default_rng(21)
    return with_samples(straight_curve(20.0), rng.uniform(0, 20, 5000), k=500)


@pytest.fixture(scope="module")
def gaussian_curve():
    rng = np.random.default_rng(22)
    return with_samples(straight_curve(20.0), rng.normal(10.0, 2.0, 5000))


class TestMetricConfig:
    def test_rejects_negative_gamma(self):
        with pytest.raises(InvalidArgumentError):
            MetricConfig(gamma=-0.1)

    def test_rejects_zero_k(self):
        with pytest.raises(InvalidArgumentError):
            MetricConfig(density_k=0)

    def test_default_neighbours(self):
        assert MetricConfig().neighbors(100) == 10
        assert MetricConfig().neighbors(1000) == 50
        assert MetricConfig(density_k=7).neighbors(1000) == 7


class TestAttachDensity:
    def test_uniform_interior(self, uniform_curve):
        inner = (uniform_curve.density_u > 3) & (uniform_curve.density_u < 17)
        np.testing.assert_allclose(uniform_curve.density[inner], 1 / 20.0, rtol=0.15)

    def test_gaussian_mode(self, gaussian_curve):
        expected = 1 / (2.0 * math.sqrt(2 * math.pi))
        assert density_at(gaussian_curve, 10.0) == pytest.approx(expected, rel=0.20)

    def test_positive_everywhere(self, gaussian_curve):
        assert (gaussian_curve.density > 0).all()

    def test_coincident_projections_get_max_finite(self):
        c = straight_curve(4.0)
        pts = np.column_stack([np.r_[np.full(20, 2.0), np.linspace(0, 4, 11)], np.zeros(31)])
        c = attach_density(c, Dataset(pts), MetricConfig(density_k=3))
        assert np.isfinite(c.density).all()
        at = np.searchsorted(c.density_u, 2.0)
        assert c.density[at] == c.density.max()

    def test_too_few_samples(self):
        c = straight_curve(4.0)
        with pytest.raises(InvalidArgumentError):
            attach_density(c, Dataset(np.zeros((5, 2))), MetricConfig(density_k=6))

    def test_knn_estimator_matches_formula(self):
        coords = np.array([0.0, 1.0, 3.0, 6.0])
        # the 2nd nearest coordinate to 2.0 is at distance 1
        assert knn_density_1d(coords, [2.0], 2)[0] == pytest.approx(2 / (2 * 4 * 1.0))


class TestMetricLength:
    def test_gamma_zero_is_arc_length(self, gaussian_curve):
        assert metric_length(gaussian_curve, 1.25, 13.7, MetricConfig(gamma=0)) == 13.7 - 1.25

    def test_same_point_is_zero(self, gaussian_curve):
        assert metric_length(gaussian_curve, 4.0, 4.0, MetricConfig(gamma=1)) == 0.0

    def test_uniform_total_mass(self, uniform_curve):
        assert total_metric_length(uniform_curve, MetricConfig(gamma=1)) == pytest.approx(1.0, rel=0.05)

    def test_out_of_range(self, gaussian_curve):
        with pytest.raises(OutOfRangeError) as info:
            metric_length(gaussian_curve, 0.0, 25.0, MetricConfig(gamma=1))
        assert info.value.attainable == (0.0, 20.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 20), st.floats(0, 20), st.floats(0, 20), st.sampled_from([0.0, 1 / 3, 1.0, 2.0]))
    def test_additive_and_antisymmetric(self, gaussian_curve, a, b, c, gamma):
        cfg = MetricConfig(gamma=gamma)
        ab = metric_length(gaussian_curve, a, b, cfg)
        assert metric_length(gaussian_curve, b, a, cfg) == -ab
        ac = metric_length(gaussian_curve, a, c, cfg)
        bc = metric_length(gaussian_curve, b, c, cfg)
        scale = total_metric_length(gaussian_curve, cfg)
        assert abs(ac - (ab + bc)) <= 1e-12 * scale

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 19.9), st.floats(1e-6, 0.1), st.sampled_from([1 / 3, 1.0]))
    def test_strictly_increasing(self, gaussian_curve, a, h, gamma):
        cfg = MetricConfig(gamma=gamma)
        assert metric_length(gaussian_curve, 0.0, a + h, cfg) > metric_length(gaussian_curve, 0.0, a, cfg)


class TestInverseMetricLength:
    def test_zero_length(self, gaussian_curve):
        assert inverse_metric_length(gaussian_curve, 7.3, 0.0, MetricConfig(gamma=1)) == 7.3

    def test_gamma_zero(self, gaussian_curve):
        assert inverse_metric_length(gaussian_curve, 1.0, 2.5, MetricConfig(gamma=0)) == pytest.approx(3.5, abs=1e-12)

    @pytest.mark.parametrize("gamma", [0.0, 1 / 3, 1.0])
    def test_round_trip(self, gaussian_curve, gamma):
        cfg = MetricConfig(gamma=gamma)
        rng = np.random.default_rng(23)
        length = gaussian_curve.u[-1] - gaussian_curve.u[0]
        for u0, u1 in rng.uniform(0, 20, size=(100, 2)):
            r = metric_length(gaussian_curve, u0, u1, cfg)
            assert abs(inverse_metric_length(gaussian_curve, u0, r, cfg) - u1) <= 1e-8 * length

    def test_too_long_reports_attainable(self, gaussian_curve):
        cfg = MetricConfig(gamma=1)
        with pytest.raises(OutOfRangeError) as info:
            inverse_metric_length(gaussian_curve, 10.0, 5.0, cfg)
        lo, hi = info.value.attainable
        assert lo == pytest.approx(metric_length(gaussian_curve, 10.0, 0.0, cfg))
        assert hi == pytest.approx(metric_length(gaussian_curve, 10.0, 20.0, cfg))

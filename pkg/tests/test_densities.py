import math

import numpy as np
import pytest
from scipy import integrate

from sosinfer.densities import (
    DensityModel,
    bandwidths,
    expected_density,
    expected_density_se,
    fit_kde,
    pdf,
    self_overlap,
)
from sosinfer.pool import DistributionSpec


def test_closed_forms():
    assert pdf(DensityModel.gaussian([0.0], [[1.0]]), 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert pdf(DensityModel.laplace_product([0.0], 1.0), 0.0) == pytest.approx(0.5)
    assert pdf(DensityModel.uniform([0, 0], [2, 4]), [1.0, 1.0]) == pytest.approx(1 / 8)


def test_kde_single_point_centre():
    for l, b in [(1, 0.3), (3, 0.7)]:
        m = DensityModel("kde", l, scale=np.full(l, b), points=np.zeros((1, l)))
        assert pdf(m, np.zeros(l)) == pytest.approx((2 * math.pi) ** (-l / 2) * b ** (-l))


def test_silverman_two_points():
    bw = bandwidths(np.array([[0.0], [1.0]]))
    assert bw[0] == pytest.approx(1.06 * math.sqrt(0.5) * 2 ** -0.2, abs=1e-12)
    assert bw[0] == pytest.approx(0.6524, abs=2e-4)  # quoted to four digits


def test_kde_symmetric_and_positive():
    m = fit_kde(np.array([[-1.3], [1.3]]))
    xs = np.linspace(-5, 5, 41)
    assert np.allclose(pdf(m, xs[:, None]), pdf(m, -xs[:, None]))
    assert np.all(pdf(m, np.array([[40.0], [-25.0], [0.0]])) > 0)


def test_kde_consistency(rng):
    m = fit_kde(rng.normal(size=(10_000, 1)))
    assert abs(pdf(m, 0.0) - 1 / math.sqrt(2 * math.pi)) < 0.1 / math.sqrt(2 * math.pi)


def test_kde_integrates_to_one(rng):
    m = fit_kde(rng.normal(size=(50, 1)))
    val, _ = integrate.quad(lambda x: pdf(m, x), -20, 20, limit=200)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_zero_variance_rejected():
    with pytest.raises(ValueError, match="zero-variance"):
        fit_kde(np.array([[1.0, 0.0], [1.0, 2.0]]))


def test_expected_density_analytic():
    g1 = DensityModel.gaussian([0.0], [[1.0]])
    assert expected_density(g1, g1, 1, 0, analytic=True) == pytest.approx(1 / (2 * math.sqrt(math.pi)), abs=1e-12)
    g3 = DensityModel.gaussian(np.zeros(3), np.eye(3))
    assert expected_density(g3, g3, 1, 0, analytic=True) == pytest.approx((4 * math.pi) ** -1.5, abs=1e-12)
    # numeric-integration oracle for the one-dimensional overlap
    val, _ = integrate.quad(lambda x: pdf(g1, x) ** 2, -np.inf, np.inf)
    assert val == pytest.approx(self_overlap(g1), abs=1e-12)


def test_expected_density_constant():
    u = DensityModel.uniform([0.0, 0.0], [1.0, 2.0])
    assert expected_density(u, u, 1000, 3) == 0.5


def test_mc_agrees_with_analytic():
    g = DensityModel.gaussian(np.zeros(2), np.array([[1.0, 0.3], [0.3, 2.0]]))
    mean, se = expected_density_se(g, g, 50_000, 1)
    assert abs(mean - self_overlap(g)) <= 4 * se


def test_standard_error_halves():
    g = DensityModel.laplace_product(np.zeros(2), 1.0)
    ratios = []
    for seed in range(5):
        _, s1 = expected_density_se(g, g, 20_000, seed)
        _, s2 = expected_density_se(g, g, 80_000, seed + 100)
        ratios.append(s1 / s2)
    assert abs(np.mean(ratios) - 2.0) < 3 * np.std(ratios) + 0.1


def test_distribution_sampler_path():
    spec = DistributionSpec("laplace-product", 2)
    m = DensityModel.from_distribution(spec)
    assert expected_density(spec, m, 1, 0, analytic=True) == pytest.approx(1 / 16)
    mean, se = expected_density_se(spec, m, 40_000, 2)
    assert abs(mean - 1 / 16) <= 4 * se


def test_analytic_requires_same_model():
    a = DensityModel.gaussian([0.0], [[1.0]])
    b = DensityModel.gaussian([1.0], [[1.0]])
    with pytest.raises(ValueError):
        expected_density(a, b, 10, 0, analytic=True)

import math

import numpy as np
import pytest
from scipy import optimize, stats

from sosinfer.densities import DensityModel
from sosinfer.errors import ConfigError
from sosinfer.limit_laws import (
    LimitLawSpec,
    TauLaw,
    eta_value,
    quantile,
    rho_residual,
    sample_limit,
    scaling_exponent,
    solve_rho,
    solve_zeta_explicit,
    tau_law_from_densities,
    tau_survival,
    unit_ball_volume,
    zeta_residual,
)
from sosinfer.pool import make_rng


def test_tau_survival_examples():
    assert tau_survival(TauLaw([1.0]), 0.0) == 1.0
    assert tau_survival(TauLaw([1.0]), 1.0) == pytest.approx(math.exp(-1))
    assert tau_survival(TauLaw([1.0, 2.0]), 1.0) == pytest.approx((math.exp(-1) + math.exp(-2)) / 2, abs=1e-12)
    t = np.linspace(0, 5, 50)
    s = tau_survival(TauLaw([0.3, 1.0, 4.0]), t)
    assert np.all(np.diff(s) < 0) and np.all((s > 0) & (s <= 1))


def test_tau_law_validation():
    with pytest.raises(ValueError):
        TauLaw([1.0, 0.0])


def test_rho_examples():
    assert solve_rho(1.0, TauLaw([1e6])) == pytest.approx(1.0, abs=1e-3)
    oracle = optimize.brentq(lambda r: 1 / r - (1 - math.exp(-r * r)), 1.0, 5.0, xtol=1e-14)
    assert solve_rho(1.0, TauLaw([1.0])) == pytest.approx(oracle, abs=1e-10)
    assert oracle == pytest.approx(1.258, abs=1e-3)
    law = TauLaw([0.4, 1.3, 2.2])
    double = TauLaw(2 * law.rates)
    for z2 in (0.1, 1.0, 7.0):
        assert solve_rho(z2, double) == pytest.approx(solve_rho(2 * z2, law), rel=1e-10)
    with pytest.raises(ValueError):
        solve_rho(0.0, law)


def test_rho_small_rate_residual():
    law = TauLaw([1e-4, 3e-4])
    r = solve_rho(0.01, law)
    assert r >= 1 and rho_residual(0.01, r, law) <= 1e-10


def test_eta_examples():
    law = TauLaw([1.0])
    assert eta_value(1e6, 1.0, law) == pytest.approx(1.0, abs=1e-5)
    assert eta_value(1e-6, 1.0, law) == pytest.approx(0.5e-6, rel=1e-4)
    assert eta_value(1.0, 1.0, law) == pytest.approx(math.exp(-1), abs=1e-12)
    tau = make_rng(3).exponential(1.0, 400_000)
    mc = np.maximum(1 - tau / 1.0, 0).mean()
    assert abs(mc - math.exp(-1)) < 4 * np.maximum(1 - tau, 0).std() / math.sqrt(tau.size)


def test_eta_monotone_and_bounded():
    law = TauLaw([0.2, 1.0, 3.0])
    a = np.logspace(-8, 6, 300)
    e = eta_value(a, 1.0, law)
    assert np.all((e >= 0) & (e <= 1)) and np.all(np.diff(e) > 0)


def test_scaling_exponent():
    assert scaling_exponent(1) == 1 and scaling_exponent(2, "explicit") == 1
    assert scaling_exponent(3) == pytest.approx(0.875)
    assert scaling_exponent(4, "implicit") == pytest.approx(0.8)


def test_mean_law_l1():
    d = sample_limit(LimitLawSpec("mean", 1, [[1.0]]), 100_000, 5)
    assert abs(d.mean() - 1.0) < 0.03
    assert np.all(d >= 0)


def test_quantile_examples():
    spec = LimitLawSpec("mean", 1, [[1.0]])
    q = quantile(spec, 0.95, 100_000, 0)
    assert abs(q - stats.chi2.ppf(0.95, 1)) < 0.1
    assert quantile(LimitLawSpec("mean", 1, [[4.0]]), 0.95, 100_000, 0) == pytest.approx(4 * q, rel=1e-14)
    assert quantile(spec, 0.5, 100_000, 0) < q
    assert quantile(spec, 0.95, 100_000, 0) == q
    with pytest.raises(ValueError):
        quantile(spec, 0.95, 10, 0)


def test_l3_power_law_formula():
    C = 2.0**-3 / math.gamma(2.5)
    spec = LimitLawSpec("mean", 3, np.eye(3), C=C)
    d = sample_limit(spec, 1000, 9)
    Z = LimitLawSpec("mean", 3, np.eye(3)).sampler().draw(make_rng(9, 0x11), 1000)
    expect = 1.6 * np.linalg.norm(Z, axis=1) ** 1.25 / C**0.25
    assert np.allclose(d, expect, rtol=1e-12)


def test_incomplete_specs():
    with pytest.raises(ConfigError):
        sample_limit(LimitLawSpec("mean", 2, np.eye(2)), 10, 0)
    with pytest.raises(ConfigError):
        sample_limit(LimitLawSpec("explicit", 1, np.eye(1)), 10, 0)
    with pytest.raises(ConfigError):
        LimitLawSpec("bogus", 1, np.eye(1))


def ks(a, b):
    return stats.ks_2samp(a, b).statistic


def gaussian_rates(l, scale, n=2000):
    f = DensityModel.gaussian(np.zeros(l), np.eye(l))
    pts = make_rng(77).standard_normal((n, l))
    return tau_law_from_densities(pts, f).rates * scale


def test_explicit_matches_mean_law_l1():
    a = sample_limit(LimitLawSpec("mean", 1, [[1.0]]), 100_000, 1)
    b = sample_limit(LimitLawSpec("explicit", 1, [[1.0]], upsilon=[[1.0]]), 100_000, 2)
    assert ks(a, b) <= 0.01


def test_explicit_matches_mean_law_l2():
    law = TauLaw(gaussian_rates(2, 1.0, 300))
    a = sample_limit(LimitLawSpec("mean", 2, np.eye(2), tau_law=law), 100_000, 1)
    b = sample_limit(LimitLawSpec("explicit", 2, np.eye(2), tau_law=law, v_sample=np.eye(2)), 100_000, 2)
    assert ks(a, b) <= 0.015


def l3_pair(scale, exponent):
    law = TauLaw(gaussian_rates(3, scale))
    a = sample_limit(LimitLawSpec("mean", 3, np.eye(3), tau_law=law), 100_000, 1)
    b = sample_limit(LimitLawSpec("explicit", 3, np.eye(3), tau_law=law, v_sample=np.eye(3), zeta_exponent=exponent), 100_000, 2)
    return ks(a, b)


@pytest.mark.parametrize("scale", [1.0, 0.05])
def test_explicit_matches_mean_law_l3_half_exponent(scale):
    assert l3_pair(scale, "half") <= 0.015


@pytest.mark.xfail(strict=True, reason="fixed-point power l does not match the mean law away from unit rate scale")
def test_explicit_matches_mean_law_l3_full_exponent():
    assert l3_pair(0.05, "full") <= 0.015


def test_zeta_examples():
    spec2 = LimitLawSpec("explicit", 2, np.eye(1), tau_law=TauLaw([1.0]), v_sample=np.eye(1))
    assert np.all(solve_zeta_explicit([0.0], spec2) == 0.0)
    fast = LimitLawSpec("explicit", 2, np.eye(1), tau_law=TauLaw([1e9]), v_sample=np.eye(1))
    assert solve_zeta_explicit([0.7], fast)[0] == pytest.approx(-0.7, abs=1e-8)
    oracle = optimize.brentq(lambda z: z * (1 - math.exp(-z * z)) - 0.5, 0.1, 3.0, xtol=1e-14)
    zeta = solve_zeta_explicit([-0.5], spec2)[0]
    assert zeta == pytest.approx(oracle, abs=1e-8)
    assert zeta * (1 - math.exp(-zeta * zeta)) == pytest.approx(0.5, abs=1e-8)


def test_zeta_residual_random(rng):
    for _ in range(10):
        q = int(rng.integers(1, 4))
        l = int(rng.integers(2, 5))
        K = 5
        A = rng.normal(size=(K, q, q))
        V = A @ np.transpose(A, (0, 2, 1)) + 0.1 * np.eye(q)
        spec = LimitLawSpec("explicit", l, np.eye(q), tau_law=TauLaw(rng.uniform(0.2, 2, K)), v_sample=V)
        z = rng.normal(size=q)
        zeta = solve_zeta_explicit(z, spec)
        assert zeta_residual(z, zeta, spec) <= 1e-8


def test_unit_ball_volume():
    assert unit_ball_volume(1) == pytest.approx(2.0)
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 / 3 * math.pi)

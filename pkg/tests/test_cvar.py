import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize, stats

from sosinfer.cvar import (
    VARIANTS,
    CalibrationConfig,
    CvarProgram,
    ci_baseline_bootstrap,
    ci_baseline_clt,
    cvar_ci_sos,
    cvar_estimating_function,
    cvar_true,
    m_value,
    m_variance_true,
    resample_radius,
    saa_solve,
    scalar_profile,
)
from sosinfer.errors import CalibrationError, DomainError, ProfileInfeasible
from sosinfer.pool import DistributionSpec, SamplePool, make_rng, pool_from_points, sample_synthetic
from sosinfer.sos_profile import PlugInEstimate, profile_plugin, transport_profile

GAUSS4 = DistributionSpec("gaussian", 4)
LAPLACE4 = DistributionSpec("laplace-product", 4)


def scalar_program(s, alpha=0.9):
    return CvarProgram(alpha, SamplePool(np.asarray(s, dtype=float)[:, None]))


def test_saa_examples():
    est = saa_solve(scalar_program(np.arange(1, 11)))
    assert est.theta_hat == 9 and est.c_hat == pytest.approx(10.0, abs=1e-12)
    est = saa_solve(scalar_program(np.full(7, 2.5)))
    assert est.theta_hat == 2.5 and est.c_hat == 2.5


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 40), st.sampled_from([0.5, 0.8, 0.9, 0.95]), st.integers(0, 2**31))
def test_saa_optimal_over_knots(n, alpha, seed):
    s = make_rng(seed).normal(size=n)
    est = saa_solve(scalar_program(s, alpha))
    objective = [np.mean(m_value(t, s, alpha)) for t in s]
    assert est.c_hat == pytest.approx(min(objective), abs=1e-12)
    # empirical subgradient at theta_hat contains 0
    above = np.sum(s > est.theta_hat)
    at = np.sum(s == est.theta_hat)
    lo = 1 - (above + at) / (n * (1 - alpha))
    hi = 1 - above / (n * (1 - alpha))
    assert lo - 1e-12 <= 0 <= hi + 1e-12


def test_saa_large_sample():
    prog = CvarProgram(0.9, sample_synthetic(GAUSS4, 100_000, 1))
    assert abs(saa_solve(prog).c_hat - 3.510) < 0.05


def test_profile_zero_at_saa_pair():
    prog = CvarProgram(0.9, sample_synthetic(GAUSS4, 20, 4))
    est = saa_solve(prog)
    h = cvar_estimating_function(0.9, scalar=True)
    pool = pool_from_points(prog.s[:, None])
    ev = profile_plugin(pool, h, PlugInEstimate(np.array([est.c_hat]), np.array([est.theta_hat])))
    assert ev.value == pytest.approx(0.0, abs=1e-12)
    assert np.mean(m_value(est.theta_hat, prog.s, 0.9)) == est.c_hat


def test_cvar_true_gaussian():
    var, cv = cvar_true(DistributionSpec("gaussian", 1), 0.9)
    z = stats.norm.ppf(0.9)
    assert var == pytest.approx(z, abs=1e-12) and cv == pytest.approx(stats.norm.pdf(z) / 0.1, abs=1e-12)
    assert (round(var, 4), round(cv, 4)) == (1.2816, 1.7550)
    closed = cvar_true(GAUSS4, 0.9)
    numeric = cvar_true(GAUSS4, 0.9, method="numeric")
    assert np.allclose(closed, numeric, atol=1e-6)


def laplace4_pdf(x):
    a = abs(x)
    return math.exp(-a) * (120 + 120 * a + 48 * a * a + 8 * a**3) / 768


def test_laplace_density_oracle_is_a_density():
    mass = integrate.quad(laplace4_pdf, -np.inf, np.inf)[0]
    var = integrate.quad(lambda x: x * x * laplace4_pdf(x), -np.inf, np.inf)[0]
    assert mass == pytest.approx(1.0, abs=1e-12) and var == pytest.approx(8.0, abs=1e-10)


def laplace4_cvar(alpha):
    cdf = lambda v: 0.5 + integrate.quad(laplace4_pdf, 0, v, epsabs=1e-14)[0]
    var = optimize.brentq(lambda v: cdf(v) - alpha, 0, 30, xtol=1e-14)
    tail = integrate.quad(lambda x: (x - var) * laplace4_pdf(x), var, np.inf, epsabs=1e-14)[0]
    return var, var + tail / (1 - alpha)


def test_cvar_true_laplace_against_density_oracle():
    var, cv = cvar_true(LAPLACE4, 0.9)
    ovar, ocv = laplace4_cvar(0.9)
    assert var == pytest.approx(ovar, abs=1e-6) and cv == pytest.approx(ocv, abs=1e-6)


def test_cvar_true_unsupported():
    mix = DistributionSpec("custom-mixture", 1, components=(DistributionSpec("gaussian", 1),), weights=(1.0,))
    with pytest.raises(DomainError):
        cvar_true(mix, 0.9)


@pytest.mark.parametrize("dist", [GAUSS4, LAPLACE4])
def test_m_variance_true_mc(dist):
    theta, _ = cvar_true(dist, 0.9)
    s = sample_synthetic(dist, 400_000, 7).points.sum(axis=1)
    m = m_value(theta, s, 0.9)
    v = m_variance_true(dist, 0.9)
    # standard error of a sample variance: sqrt((mu4 - v^2) / N)
    se = math.sqrt((np.mean((m - m.mean()) ** 4) - v * v) / m.size)
    assert abs(m.var() - v) < 4 * se


def test_clt_example():
    s = np.arange(1, 11, dtype=float)
    ci = ci_baseline_clt(scalar_program(s), 0.95)
    m = 9 + np.maximum(s - 9, 0) / 0.1
    half = stats.norm.ppf(0.975) * m.std(ddof=1) / math.sqrt(10)
    assert ci.lower == pytest.approx(10 - half, abs=1e-12) and ci.upper == pytest.approx(10 + half, abs=1e-12)
    deg = ci_baseline_clt(scalar_program(np.ones(5)))
    assert deg.length == 0 and "degenerate" in deg.flags


def test_clt_width_scaling():
    w = {n: np.mean([ci_baseline_clt(CvarProgram(0.9, sample_synthetic(GAUSS4, n, r, (n,)))).length for r in range(40)]) for n in (200, 800)}
    assert w[800] / w[200] == pytest.approx(0.5, rel=0.1)


def test_bootstrap():
    prog = CvarProgram(0.9, sample_synthetic(GAUSS4, 50, 3))
    a, b = ci_baseline_bootstrap(prog, 0.95, 500, 11), ci_baseline_bootstrap(prog, 0.95, 500, 11)
    assert (a.lower, a.upper) == (b.lower, b.upper)
    assert a.lower < saa_solve(prog).c_hat < a.upper
    c = ci_baseline_bootstrap(scalar_program(np.full(12, 3.0)), 0.9, 100, 0)
    assert c.lower == c.upper == 3.0
    with pytest.raises(ValueError):
        ci_baseline_bootstrap(prog, 0.95, 50)


def small_cfg(**kw):
    return CalibrationConfig(**{"draws": 5000, "resamples": 50, **kw})


@pytest.mark.parametrize("variant", VARIANTS)
def test_sos_contains_c_hat_and_deterministic(variant):
    prog = CvarProgram(0.9, sample_synthetic(GAUSS4, 30, 5))
    cfg = small_cfg(endpoints="value")
    a, b = cvar_ci_sos(prog, variant, 0.95, cfg), cvar_ci_sos(prog, variant, 0.95, cfg)
    assert (a.lower, a.upper, a.delta_n) == (b.lower, b.upper, b.delta_n)
    assert a.contains(saa_solve(prog).c_hat) and a.length > 0 and a.formulation == variant


@pytest.mark.parametrize("variant", VARIANTS)
def test_sos_zero_variance(variant):
    with pytest.raises(CalibrationError):
        cvar_ci_sos(scalar_program(np.ones(20)), variant, 0.95, small_cfg())
    with pytest.raises(CalibrationError):
        cvar_ci_sos(CvarProgram(0.9, np.ones((20, 4))), variant, 0.95, small_cfg())


def test_sos_errors_and_flags():
    prog = CvarProgram(0.9, sample_synthetic(GAUSS4, 30, 5))
    with pytest.raises(DomainError):
        cvar_ci_sos(CvarProgram(0.9, sample_synthetic(GAUSS4, 9, 0)), "esos-c")
    with pytest.raises(ValueError):
        cvar_ci_sos(prog, "bogus")
    with pytest.raises(ValueError):
        CalibrationConfig(mode="truth")
    t = cvar_ci_sos(prog, "esos-c", 0.95, small_cfg(mode="truth", dist=GAUSS4))
    assert "truth-calibrated" in t.flags
    r = cvar_ci_sos(prog, "isos", 0.95, small_cfg())
    assert "resample-calibrated" in r.flags and r.alpha == 0.0
    lim = cvar_ci_sos(prog, "isos", 0.95, small_cfg(radius="limit"))
    assert "isos-density-fallback" in lim.flags


def test_bisection_matches_lp():
    prog = CvarProgram(0.9, sample_synthetic(GAUSS4, 25, 8))
    cfg = small_cfg(radius="limit")
    lp = cvar_ci_sos(prog, "esos-c", 0.95, cfg)
    bis = cvar_ci_sos(prog, "esos-c", 0.95, CalibrationConfig(draws=5000, radius="limit", method="bisection"))
    assert bis.lower == pytest.approx(lp.lower, abs=1e-6) and bis.upper == pytest.approx(lp.upper, abs=1e-6)


def test_explicit_radius_skips_calibration():
    prog = CvarProgram(0.9, sample_synthetic(GAUSS4, 30, 5))
    ci = cvar_ci_sos(prog, "esos-c", 0.95, small_cfg(), radius=(3.0, 1.0))
    assert ci.delta_n == pytest.approx(0.1)
    wider = cvar_ci_sos(prog, "esos-c", 0.95, small_cfg(), radius=(6.0, 1.0))
    assert wider.lower <= ci.lower and wider.upper >= ci.upper


def test_scalar_profile_matches_lp(rng):
    for _ in range(40):
        n, extra = int(rng.integers(2, 7)), int(rng.integers(0, 5))
        pts = rng.normal(size=(n + extra, 2))
        cost = ((pts[:n, None] - pts[None]) ** 2).sum(-1)
        h = rng.normal(size=n + extra)
        if h.min() > 0 or h.max() < 0:
            h -= h.mean()
        assert scalar_profile(cost, h) == pytest.approx(transport_profile(cost, h[:, None]).value, abs=1e-9)
    with pytest.raises(ProfileInfeasible):
        scalar_profile(np.ones((2, 3)), np.array([1.0, 2.0, 3.0]))


def test_resample_radius():
    prog = CvarProgram(0.9, sample_synthetic(GAUSS4, 40, 2))
    cfg = small_cfg()
    r1 = resample_radius(prog, "esos-o", 0.95, cfg)
    assert r1 == resample_radius(prog, "esos-o", 0.95, cfg) and 0 < r1 < math.inf
    assert resample_radius(prog, "esos-o", 0.5, cfg) <= r1

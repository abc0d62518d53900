"""Conditional value at risk: SAA estimate, SOS intervals and CLT / bootstrap baselines.

With ``s = sum_k x_k`` the program is ``min_theta E m(theta, X)`` where
``m(theta, x) = theta + (s - theta)^+ / (1 - alpha)``.  The SOS intervals use the
estimating pair ``h = (m(theta_hat, x) - C, 1 - I(s > theta_hat)/(1 - alpha))``
with ``theta_hat`` plugged in, so the target ``C`` is scalar.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special, stats

from .densities import DensityModel, fit_kde, pdf
from .errors import CalibrationError, DomainError
from .limit_laws import LimitLawSpec, TauLaw, quantile, scaling_exponent, unit_ball_volume
from .pool import DistributionSpec, SamplePool, make_rng, pool_from_points
from .robust_bounds import ConfidenceInterval, ci_endpoints_lp, ci_for_scalar_target
from .errors import ProfileInfeasible
from .sos_profile import EstimatingFunction, PlugInEstimate, profile_plugin, transport_profile

VARIANTS = ("esos-c", "esos-o", "isos")


def coordinate_sum(points: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=float).sum(axis=1)


@dataclasses.dataclass(frozen=True)
class CvarProgram:
    alpha: float
    sample: SamplePool
    reducer: Callable[[np.ndarray], np.ndarray] = coordinate_sum

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not isinstance(self.sample, SamplePool):
            object.__setattr__(self, "sample", SamplePool(self.sample))

    @property
    def s(self) -> np.ndarray:
        return np.asarray(self.reducer(self.sample.points), dtype=float).reshape(-1)

    @property
    def n(self) -> int:
        return self.sample.n


@dataclasses.dataclass(frozen=True)
class SaaEstimate:
    theta_hat: float
    c_hat: float


def m_value(theta, s, alpha):
    return theta + np.maximum(np.asarray(s) - theta, 0.0) / (1.0 - alpha)


def m_grad(theta, s, alpha):
    """``d m / d theta``; a point exactly at the kink gets the value from below (1)."""
    return 1.0 - (np.asarray(s) > theta) / (1.0 - alpha)


def saa_index(n: int, alpha: float) -> int:
    """1-based index ``ceil(alpha n)`` of the SAA order statistic."""
    return max(1, math.ceil(alpha * n - 1e-9))


def saa_solve(program: CvarProgram) -> SaaEstimate:
    s = program.s
    if s.size < 2:
        raise ValueError("SAA needs at least two observations")
    theta = float(np.sort(s)[saa_index(s.size, program.alpha) - 1])
    return SaaEstimate(theta, float(np.mean(m_value(theta, s, program.alpha))))


# -- population quantities -----------------------------------------------------

class AggregateLaw:
    """Law of ``S = sum_k X^(k)`` for Gaussian or independent Laplace coordinates."""

    def __init__(self, dist: DistributionSpec):
        if dist.family not in ("gaussian", "laplace-product"):
            raise DomainError(f"C-VaR of the aggregate is not available for family {dist.family!r}")
        self.family = dist.family
        self.mu = float(np.sum(dist.mean))
        if dist.family == "gaussian":
            self.sd = float(math.sqrt(np.ones(dist.dim) @ dist.covariance @ np.ones(dist.dim)))
            self.scales = None
        else:
            self.scales = np.ones(dist.dim) if dist.scale is None else np.asarray(dist.scale, dtype=float)
            self.sd = float(math.sqrt(2.0 * np.sum(self.scales**2)))
        # beyond t_max the centred characteristic function is below 1e-17
        if self.scales is None:
            self.t_max = math.sqrt(2 * 40.0) / self.sd
        else:
            self.t_max = (1e17 ** (1.0 / self.scales.size) - 1.0) ** 0.5 / self.scales.min()

    def phi0(self, t):
        t = np.asarray(t, dtype=float)
        if self.scales is None:
            return np.exp(-0.5 * (self.sd * t) ** 2)
        return np.prod(1.0 / (1.0 + np.multiply.outer(t * t, self.scales**2)), axis=-1)

    def cdf(self, x: float) -> float:
        u = x - self.mu
        if u == 0:
            return 0.5
        val, _ = integrate.quad(lambda t: self.phi0(t) / t if t > 0 else 0.0, 0.0, self.t_max, weight="sin", wvar=u, limit=400, epsabs=1e-13)
        return 0.5 + val / math.pi

    def pdf(self, x: float) -> float:
        val, _ = integrate.quad(lambda t: self.phi0(t), 0.0, self.t_max, weight="cos", wvar=x - self.mu, limit=400, epsabs=1e-13)
        return val / math.pi

    def abs_moment(self, v: float) -> float:
        """``E|S - v|`` via ``(2/pi) int (1 - Re phi_{S-v}(t)) / t^2 dt``."""
        d = v - self.mu

        def f(t):
            if t < 1e-4:
                return 0.5 * (self.sd**2 + d * d)
            return (1.0 - self.phi0(t) * math.cos(t * d)) / (t * t)

        T = self.t_max
        pts = [min(T, k * 2 * math.pi / max(abs(d), 1e-12)) for k in range(1, 40)] if d else None
        val, _ = integrate.quad(f, 0.0, T, limit=1000, epsabs=1e-13, epsrel=1e-13, points=sorted(set(p for p in pts if 0 < p < T))[:40] if pts else None)
        return 2.0 / math.pi * (val + 1.0 / T)

    def upper_partial(self, v: float) -> float:
        """``E (S - v)^+``."""
        return 0.5 * ((self.mu - v) + self.abs_moment(v))

    def upper_partial2(self, v: float) -> float:
        """``E ((S - v)^+)^2 = 2 int_v^inf (x - v)(1 - F(x)) dx``."""
        hi = v + 60.0 * self.sd
        val, _ = integrate.quad(lambda x: 2.0 * (x - v) * (1.0 - self.cdf(x)), v, hi, limit=200, epsabs=1e-11)
        return val


def _cvar_gaussian(mu, sd, alpha):
    z = stats.norm.ppf(alpha)
    return mu + sd * z, mu + sd * stats.norm.pdf(z) / (1.0 - alpha)


_TRUTH_CACHE: dict = {}


def _dist_key(dist: DistributionSpec, alpha: float, tag: str):
    arr = lambda a: None if a is None else tuple(np.asarray(a, dtype=float).ravel())
    return (tag, dist.family, dist.dim, arr(dist.loc), arr(dist.scale), arr(dist.cov), float(alpha))


def _cached(key, fn):
    if key not in _TRUTH_CACHE:
        _TRUTH_CACHE[key] = fn()
    return _TRUTH_CACHE[key]


def cvar_true(dist: DistributionSpec, alpha: float, method: str = "auto") -> tuple[float, float]:
    """``(VaR, C-VaR)`` of the coordinate sum.

    Gaussian laws use the closed form unless ``method="numeric"``; Laplace
    products always go through Fourier inversion of the characteristic function.
    """
    return _cached(_dist_key(dist, alpha, "cvar-" + method), lambda: _cvar_true(dist, alpha, method))


def _cvar_true(dist, alpha, method):
    law = AggregateLaw(dist)
    if law.family == "gaussian" and method != "numeric":
        return tuple(float(v) for v in _cvar_gaussian(law.mu, law.sd, alpha))
    lo, hi = law.mu - 40 * law.sd, law.mu + 40 * law.sd
    var = optimize.brentq(lambda x: law.cdf(x) - alpha, lo, hi, xtol=1e-14, rtol=1e-14)
    return float(var), float(var + law.upper_partial(var) / (1.0 - alpha))


def m_variance_true(dist: DistributionSpec, alpha: float) -> float:
    """``Var m(theta*, X)`` under the data-generating law."""
    return _cached(_dist_key(dist, alpha, "var-m"), lambda: _m_variance_true(dist, alpha))


def _m_variance_true(dist, alpha):
    law = AggregateLaw(dist)
    theta, _ = cvar_true(dist, alpha)
    if law.family == "gaussian":
        k = (theta - law.mu) / law.sd
        tail = 1.0 - stats.norm.cdf(k)
        e1 = law.sd * (stats.norm.pdf(k) - k * tail)
        e2 = law.sd**2 * ((1 + k * k) * tail - k * stats.norm.pdf(k))
    else:
        e1 = law.upper_partial(theta)
        e2 = law.upper_partial2(theta)
    return float((e2 - e1 * e1) / (1.0 - alpha) ** 2)


# -- SOS intervals ----------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class CalibrationConfig:
    """How the SOS radius and endpoints are computed.

    mode: "plugin" refits variance and densities on the sample; "truth" uses
    population quantities of ``dist`` (flagged in the interval).
    endpoints: "full" keeps the gradient row in the endpoint LP, "value" drops it.
    method: "lp" solves the two endpoint LPs, "bisection" bisects the profile.
    radius: "limit" takes the quantile of the limit law, "resample" the
    quantile of the profile at ``c_hat`` over bootstrap resamples, and "auto"
    uses the limit law for esos-c and resampling for the other two variants.
    """

    draws: int = 100_000
    seed: int = 0
    mode: str = "plugin"
    endpoints: str = "full"
    method: str = "lp"
    zeta_exponent: str = "full"
    bandwidth: str | float = "silverman"
    dist: DistributionSpec | None = None
    truth_draws: int = 400_000
    radius: str = "auto"
    resamples: int = 200

    def __post_init__(self):
        if self.radius not in ("limit", "resample", "auto"):
            raise ValueError("radius must be 'limit', 'resample' or 'auto'")
        if self.resamples < 20:
            raise ValueError("at least 20 resamples are required")
        if self.mode not in ("plugin", "truth"):
            raise ValueError("calibration mode must be 'plugin' or 'truth'")
        if self.endpoints not in ("full", "value"):
            raise ValueError("endpoints must be 'full' or 'value'")
        if self.method not in ("lp", "bisection"):
            raise ValueError("method must be 'lp' or 'bisection'")
        if self.mode == "truth" and self.dist is None:
            raise ValueError("truth calibration needs the data-generating distribution")


def cvar_estimating_function(alpha: float, reducer=coordinate_sum, scalar: bool = False) -> EstimatingFunction:
    """``h((C, theta), x) = (m(theta, x) - C, dm/dtheta)``; ``scalar`` means x is already s."""

    def func(th, X):
        s = X[:, 0] if scalar else np.asarray(reducer(X), dtype=float)
        return np.column_stack([m_value(th[1], s, alpha) - th[0], m_grad(th[1], s, alpha)])

    return EstimatingFunction(func, 2, 2)


def _variant_points(program: CvarProgram, variant: str, theta: float):
    """Points in the variant's transport space, with ``m`` and its gradient at ``theta``."""
    s = program.s
    m = m_value(theta, s, program.alpha)
    g = m_grad(theta, s, program.alpha)
    if variant == "esos-c":
        pts = s[:, None]
    elif variant == "esos-o":
        pts = np.asarray(program.sample.points, dtype=float)
    elif variant == "isos":
        pts = np.column_stack([m, g])
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return pts, m, g


def _sq_dist(A, B):
    d = A[:, None, :] - B[None, :, :]
    return np.einsum("ikd,ikd->ik", d, d)


def _variant_geometry(program: CvarProgram, variant: str, est: SaaEstimate):
    """Support points, cost matrix, loss values and gradient column for a variant."""
    pts, m, g = _variant_points(program, variant, est.theta_hat)
    return pts, _sq_dist(pts, pts), m, g


def limit_spec_for(program: CvarProgram, variant: str, cfg: CalibrationConfig, est: SaaEstimate | None = None) -> tuple[LimitLawSpec, dict]:
    """Plug-in (or population) limit law of the scaled profile at the true C-VaR."""
    alpha = program.alpha
    est = est or saa_solve(program)
    s = program.s
    n = s.size
    meta: dict = {}
    if cfg.mode == "truth":
        var_m = m_variance_true(cfg.dist, alpha)
        theta = cvar_true(cfg.dist, alpha)[0]
        meta["calibration"] = "truth"
    else:
        m = m_value(est.theta_hat, s, alpha)
        var_m = float(np.var(m, ddof=1))
        theta = est.theta_hat
        meta["calibration"] = "plugin"
    if not var_m > 1e-14:
        raise CalibrationError(f"{variant}: zero variance of m(theta_hat, X)")
    cov = np.diag([var_m, 0.0])
    if variant == "esos-c":
        if cfg.mode == "truth":
            p_tail = 1.0 - alpha
        else:
            p_tail = float(np.mean(s > theta))
        if p_tail <= 0:
            raise CalibrationError("esos-c: no observation above the SAA quantile")
        ups = np.diag([p_tail / (1.0 - alpha) ** 2, 0.0])
        return LimitLawSpec("explicit", 1, cov, upsilon=ups), meta
    if variant == "esos-o":
        l = program.sample.dim
        vol = unit_ball_volume(l)
        if cfg.mode == "truth":
            rng = make_rng(cfg.seed, 0x7E)
            X = cfg.dist.draw(rng, cfg.truth_draws)
            f = DensityModel.from_distribution(cfg.dist)
            pts = X
        else:
            pts = program.sample.points
            f = fit_kde(pts, cfg.bandwidth)
        rates = np.asarray(pdf(f, pts), dtype=float).reshape(-1) * vol
        above = program.reducer(pts) > theta
        V = np.zeros((pts.shape[0], 2, 2))
        V[:, 0, 0] = l * above / (1.0 - alpha) ** 2
        if l == 1:
            ups = V.mean(axis=0)
            return LimitLawSpec("explicit", 1, cov, upsilon=ups), meta
        spec = LimitLawSpec("explicit", l, cov, tau_law=TauLaw(rates), v_sample=V, zeta_exponent=cfg.zeta_exponent)
        return spec, meta
    if variant == "isos":
        if cfg.mode == "truth":
            rng = make_rng(cfg.seed, 0x75)
            ref = program.reducer(cfg.dist.draw(rng, n))
            # density of the transformed pair at the sample size in use
            mref = m_value(theta, ref, alpha)
            gref = m_grad(theta, ref, alpha)
            tp = np.column_stack([mref, gref])
        else:
            tp = np.column_stack([m_value(theta, s, alpha), m_grad(theta, s, alpha)])
        try:
            kde = fit_kde(tp, cfg.bandwidth)
        except ValueError as exc:
            raise CalibrationError(f"isos: {exc}") from exc
        rates = np.asarray(pdf(kde, tp), dtype=float) * unit_ball_volume(2)
        meta["density"] = "kde-on-two-valued-gradient"
        return LimitLawSpec("implicit", 2, cov, tau_law=TauLaw(rates)), meta
    raise ValueError(f"unknown variant {variant!r}")


def radius_kind(variant: str, cfg: CalibrationConfig) -> str:
    if cfg.radius != "auto":
        return cfg.radius
    return "limit" if variant == "esos-c" else "resample"


def scalar_profile(cost: np.ndarray, hcol: np.ndarray, tol: float = 1e-13) -> float:
    """Profile with one scalar moment row, through its exact one-dimensional dual.

    ``R = max_lam mean_i min_j (C_ij + lam h_j)``; the dual is concave and
    piecewise linear, so bisection on its supergradient finds the maximiser.
    """
    cost = np.asarray(cost, dtype=float)
    h = np.asarray(hcol, dtype=float).ravel()
    if h.min() > 0 or h.max() < 0:
        raise ProfileInfeasible("moment condition cannot be met on the support")

    def g(lam):
        v = cost + lam * h[None, :]
        j = np.argmin(v, axis=1)
        return float(v[np.arange(v.shape[0]), j].mean()), float(h[j].mean())

    lo, hi = -1.0, 1.0
    while g(lo)[1] <= 0 and lo > -1e15:
        lo *= 4.0
    while g(hi)[1] >= 0 and hi < 1e15:
        hi *= 4.0
    best = max(g(lo)[0], g(hi)[0], g(0.0)[0])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val, slope = g(mid)
        best = max(best, val)
        if slope > 0:
            lo = mid
        elif slope < 0:
            hi = mid
        else:
            break
        if hi - lo <= tol * (1.0 + abs(mid)):
            break
    return max(best, 0.0)


def resample_radius(program: CvarProgram, variant: str, level: float, cfg: CalibrationConfig, est: SaaEstimate | None = None) -> float:
    """Level quantile of the resampled profile ``R*(c_hat)``.

    Each bootstrap sample plays the role of a fresh sample and ``c_hat`` the
    role of the true value; ``theta_hat`` stays fixed, as in the interval itself
    (``c_hat`` is stationary in theta).  The support is the resample together
    with the original observations, which act as out-of-sample points, so
    ``c_hat`` always lies in the hull.
    """
    est = est or saa_solve(program)
    rng = make_rng(cfg.seed, 0x5A)
    n = program.n
    p_all, m_all, g_all = _variant_points(program, variant, est.theta_hat)
    vals = np.empty(cfg.resamples)
    for b in range(cfg.resamples):
        idx = rng.integers(0, n, n)
        cost = _sq_dist(p_all[idx], np.vstack([p_all[idx], p_all]))
        m = np.r_[m_all[idx], m_all]
        g = np.r_[g_all[idx], g_all]
        try:
            if cfg.endpoints == "value":
                vals[b] = scalar_profile(cost, m - est.c_hat)
            else:
                vals[b] = transport_profile(cost, np.column_stack([m - est.c_hat, g])).value
        except ProfileInfeasible:
            vals[b] = math.inf
    vals.sort()
    k = max(1, math.ceil(level * vals.size - 1e-9))
    return float(vals[k - 1])


def sos_radius(program: CvarProgram, variant: str, level: float, cfg: CalibrationConfig, est: SaaEstimate | None = None):
    """``(quantile, exponent, delta_n, meta)``; a resampled radius reports exponent 0."""
    if radius_kind(variant, cfg) == "resample":
        d = resample_radius(program, variant, level, cfg, est)
        if not math.isfinite(d):
            raise CalibrationError(f"{variant}: resampled radius is infinite; too few resamples cover c_hat")
        return d, 0.0, d, {"calibration": "resample"}
    spec, meta = limit_spec_for(program, variant, cfg, est)
    q = quantile(spec, level, cfg.draws, cfg.seed)
    a = scaling_exponent(spec.dim, spec.formulation)
    return q, a, q / program.n**a, meta


def cvar_ci_sos(
    program: CvarProgram,
    variant: str,
    level: float = 0.95,
    calibration: CalibrationConfig | None = None,
    radius: tuple[float, float] | None = None,
) -> ConfidenceInterval:
    """SOS interval for C-VaR.  ``radius=(quantile, alpha)`` skips calibration."""
    cfg = calibration or CalibrationConfig()
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if program.n < 10:
        raise DomainError(f"{variant}: at least 10 observations are required")
    est = saa_solve(program)
    if np.ptp(m_value(est.theta_hat, program.s, program.alpha)) == 0:
        raise CalibrationError(f"{variant}: zero variance of m(theta_hat, X)")
    flags = []
    if radius is None:
        q, a, delta_n, meta = sos_radius(program, variant, level, cfg, est)
    else:
        q, a = radius
        delta_n = q / program.n**a
        meta = {"calibration": cfg.mode}
    if meta.get("calibration") == "truth":
        flags.append("truth-calibrated")
    if variant == "isos" and meta.get("calibration") != "resample":
        flags.append("isos-density-fallback")
    if meta.get("calibration") == "resample":
        flags.append("resample-calibrated")
    pts, cost, m, g = _variant_geometry(program, variant, est)
    moment = g[:, None] if cfg.endpoints == "full" else None
    pool = pool_from_points(pts)
    try:
        if cfg.method == "lp":
            lo, up = ci_endpoints_lp(pool, m, delta_n, moment=moment, cost=cost)
        else:
            lo, up = _bisection_interval(program, variant, est, pool, delta_n, level)
    except DomainError as exc:
        raise DomainError(f"{variant}: {exc}") from exc
    lo, up = min(lo, est.c_hat), max(up, est.c_hat)
    return ConfidenceInterval(level, lo, up, q, a, cfg.draws, variant, delta_n, tuple(flags))


def _bisection_interval(program, variant, est, pool, delta_n, level):
    alpha = program.alpha
    if variant == "esos-o":
        h = cvar_estimating_function(alpha, program.reducer)
        form = "explicit"
    else:
        h = cvar_estimating_function(alpha, scalar=True)
        form = "explicit" if variant == "esos-c" else "implicit"
        if variant == "isos":
            pool = pool_from_points(program.s[:, None])

    def prof(c):
        return profile_plugin(pool, h, PlugInEstimate(np.array([c]), np.array([est.theta_hat])), form).value

    s = program.s
    mvals = m_value(est.theta_hat, s, alpha)
    span = mvals.max() - mvals.min() + 1.0
    ci = ci_for_scalar_target(prof, delta_n, (mvals.min() - span, mvals.max() + span), level, center=est.c_hat)
    return ci.lower, ci.upper


# -- baselines ---------------------------------------------------------------------

def ci_baseline_clt(program: CvarProgram, level: float = 0.95) -> ConfidenceInterval:
    est = saa_solve(program)
    m = m_value(est.theta_hat, program.s, program.alpha)
    sd = float(np.std(m, ddof=1))
    z = float(special.ndtri(0.5 + level / 2))
    half = z * sd / math.sqrt(program.n)
    flags = ("degenerate",) if sd == 0 else ()
    return ConfidenceInterval(level, est.c_hat - half, est.c_hat + half, formulation="clt", flags=flags)


def ci_baseline_bootstrap(program: CvarProgram, level: float = 0.95, B: int = 1000, seed: int = 0) -> ConfidenceInterval:
    """Percentile bootstrap of the SAA optimal value."""
    if B < 100:
        raise ValueError("B must be at least 100")
    s = program.s
    n = s.size
    rng = make_rng(seed, 0xB0)
    idx = rng.integers(0, n, size=(B, n))
    res = np.sort(s[idx], axis=1)
    theta = res[:, saa_index(n, program.alpha) - 1]
    c = theta + np.maximum(res - theta[:, None], 0.0).mean(axis=1) / (1.0 - program.alpha)
    c.sort()
    lo_k = max(1, math.ceil((1 - level) / 2 * B - 1e-9))
    hi_k = max(1, math.ceil((1 + level) / 2 * B - 1e-9))
    return ConfidenceInterval(level, float(c[lo_k - 1]), float(c[hi_k - 1]), draws=B, formulation="bootstrap")

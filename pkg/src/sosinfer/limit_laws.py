"""Limit laws of the scaled profile function and their Monte Carlo quantiles.

Every conditional expectation over the exponential mixture ``tau`` is done in
closed form given the rate ``Lambda``; randomness enters only through the
Gaussian draw ``Z`` and the finite rate / V sample carried by the spec.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable

import numpy as np

from .densities import DensityModel, pdf
from .errors import CalibrationError, ConfigError
from .pool import make_rng

FORMULATIONS = ("mean", "implicit", "explicit")
_CHUNK = 4_000_000  # max draws x rates per vectorised block


def unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


@dataclasses.dataclass(frozen=True)
class TauLaw:
    """``P(tau > t) = mean_k exp(-rates_k * t)``."""

    rates: np.ndarray

    def __post_init__(self):
        r = np.atleast_1d(np.asarray(self.rates, dtype=float))
        if r.size == 0 or np.any(~(r > 0)) or np.any(~np.isfinite(r)):
            raise ValueError("tau rates must be finite and strictly positive")
        object.__setattr__(self, "rates", r)


def tau_law_from_densities(points, f_X: DensityModel, f_Y: DensityModel | None = None, kappa: float = 0.0) -> TauLaw:
    """Rates ``(f_X + kappa f_Y)(x) * vol(unit ball)`` at the given points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    dens = np.asarray(pdf(f_X, pts), dtype=float).reshape(-1)
    if kappa and f_Y is not None:
        dens = dens + kappa * np.asarray(pdf(f_Y, pts), dtype=float).reshape(-1)
    return TauLaw(dens * unit_ball_volume(pts.shape[1]))


def tau_survival(law: TauLaw, t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    out = np.exp(-np.multiply.outer(t_arr, law.rates)).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def _phi(u: np.ndarray) -> np.ndarray:
    """``1 - (1 - e^{-u}) / u`` with a series near zero."""
    u = np.asarray(u, dtype=float)
    small = u < 1e-5
    safe = np.where(small, 1.0, u)
    big = 1.0 + np.expm1(-safe) / safe
    series = u / 2 - u * u / 6 + u**3 / 24
    return np.where(small, series, big)


def _rho_many(z2: np.ndarray, rates: np.ndarray, tol: float = 1e-13) -> np.ndarray:
    """Vectorised safeguarded Newton for ``1/rho = 1 - S(rho^2 z2)``, ``z2 > 0``."""
    z2 = np.asarray(z2, dtype=float)
    out = np.empty_like(z2)
    step = max(1, _CHUNK // rates.size)
    for s in range(0, z2.size, step):
        out[s : s + step] = _rho_block(z2[s : s + step], rates, tol)
    return out


def _rho_block(z2, rates, tol):
    def G(rho):
        t = (rho * rho * z2)[:, None] * rates[None, :]
        e = np.exp(-t)
        S = e.mean(axis=1)
        dS = -(rates[None, :] * e).mean(axis=1)
        g = 1.0 / rho - 1.0 + S
        dg = -1.0 / (rho * rho) + dS * 2.0 * rho * z2
        return g, dg

    lo = np.ones_like(z2)
    mean_rate = rates.mean()
    hi = np.maximum(2.0, 2.0 * (mean_rate * z2) ** (-1.0 / 3.0))
    g_hi, _ = G(hi)
    for _ in range(200):
        bad = g_hi > 0
        if not bad.any():
            break
        lo = np.where(bad, hi, lo)
        hi = np.where(bad, hi * 2.0, hi)
        g_hi, _ = G(hi)
    rho = 0.5 * (lo + hi)
    for _ in range(200):
        g, dg = G(rho)
        done = np.abs(g) <= tol
        if done.all():
            break
        lo = np.where(g > 0, rho, lo)
        hi = np.where(g <= 0, rho, hi)
        newton = rho - g / dg
        inside = (newton > lo) & (newton < hi) & np.isfinite(newton)
        cand = np.where(inside, newton, 0.5 * (lo + hi))
        rho = np.where(done, rho, cand)
        if np.all(done | (hi - lo <= 4 * np.finfo(float).eps * hi)):
            break
    return rho


def solve_rho(z2: float, law: TauLaw) -> float:
    """Unique ``rho >= 1`` with ``1/rho = 1 - tau_survival(rho^2 z2)``."""
    if not z2 > 0:
        raise ValueError("z2 must be positive")
    return float(_rho_many(np.array([float(z2)]), law.rates)[0])


def rho_residual(z2: float, rho: float, law: TauLaw) -> float:
    return abs(1.0 / rho - (1.0 - tau_survival(law, rho * rho * z2)))


def eta_value(z2, rho, law: TauLaw):
    a = np.asarray(rho, dtype=float) ** 2 * np.asarray(z2, dtype=float)
    out = _phi(np.multiply.outer(a, law.rates)).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def scaling_exponent(effective_dim: int, formulation: str = "mean") -> float:
    if formulation not in FORMULATIONS:
        raise ValueError(f"unknown formulation {formulation!r}")
    if effective_dim < 1:
        raise ValueError("dimension must be positive")
    if effective_dim <= 2:
        return 1.0
    return 0.5 + 3.0 / (2 * effective_dim + 2)


# -- Gaussian component ------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ZPrimeSampler:
    """Draws of the Gaussian limit ``Z``; default is ``N(0, cov)`` with PSD ``cov``."""

    q: int
    draw: Callable[[np.random.Generator, int], np.ndarray]

    @classmethod
    def gaussian(cls, cov) -> "ZPrimeSampler":
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        w, U = np.linalg.eigh((cov + cov.T) / 2)
        if w.min() < -1e-10 * max(1.0, abs(w).max()):
            raise ValueError("covariance must be positive semidefinite")
        root = U * np.sqrt(np.clip(w, 0.0, None))

        def draw(rng, n):
            return rng.standard_normal((n, cov.shape[0])) @ root.T

        return cls(cov.shape[0], draw)


@dataclasses.dataclass(frozen=True)
class LimitLawSpec:
    """Everything needed to sample one limit law.

    ``dim`` selects the branch (1, 2 or >= 3).  ``v_sample`` holds q x q
    matrices paired row-for-row with ``tau_law.rates`` (a single matrix is
    broadcast).  ``zeta_exponent`` is ``"full"`` (power ``l``) or ``"half"``
    (power ``l/2``) for the explicit l >= 3 fixed point.
    """

    formulation: str
    dim: int
    cov: np.ndarray
    tau_law: TauLaw | None = None
    C: float | None = None
    v_sample: np.ndarray | None = None
    upsilon: np.ndarray | None = None
    zeta_exponent: str = "full"
    z_sampler: ZPrimeSampler | None = None

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ConfigError(f"unknown formulation {self.formulation!r}")
        if self.dim < 1:
            raise ConfigError("dimension must be positive")
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ConfigError("covariance must be symmetric")
        object.__setattr__(self, "cov", cov)
        if self.zeta_exponent not in ("full", "half"):
            raise ConfigError("zeta_exponent must be 'full' or 'half'")
        if self.v_sample is not None:
            v = np.asarray(self.v_sample, dtype=float)
            if v.ndim == 2:
                v = v[None]
            object.__setattr__(self, "v_sample", v)

    @property
    def q(self) -> int:
        return self.cov.shape[0]

    def sampler(self) -> ZPrimeSampler:
        return self.z_sampler if self.z_sampler is not None else ZPrimeSampler.gaussian(self.cov)

    def constant_C(self) -> float:
        if self.C is not None:
            if not self.C > 0:
                raise CalibrationError("C must be positive")
            return float(self.C)
        if self.tau_law is None:
            raise ConfigError("dim >= 3 branch needs C or a tau law")
        return float(self.tau_law.rates.mean())

    def paired_sample(self) -> tuple[np.ndarray, np.ndarray]:
        """``(V_k, Lambda_k)`` pairs for the explicit branches."""
        if self.v_sample is None or self.tau_law is None:
            raise ConfigError("explicit branch needs a V sample and a tau law")
        V, rates = self.v_sample, self.tau_law.rates
        if V.shape[1:] != (self.q, self.q):
            raise ConfigError("V matrices must be q x q")
        if V.shape[0] == 1 and rates.size > 1:
            V = np.broadcast_to(V, (rates.size, self.q, self.q))
        elif V.shape[0] != rates.size:
            if rates.size == 1:
                rates = np.broadcast_to(rates, (V.shape[0],))
            else:
                raise ConfigError("V sample and rate sample must pair up")
        return np.asarray(V), np.asarray(rates)

    def power(self) -> float:
        return float(self.dim) if self.zeta_exponent == "full" else self.dim / 2.0


# -- explicit fixed point ------------------------------------------------------

class ZetaConvergenceError(CalibrationError):
    def __init__(self, residual: float):
        super().__init__(f"zeta fixed point did not converge (residual {residual:.3e})")
        self.residual = residual


@dataclasses.dataclass
class _ZetaProblem:
    """Potential ``F(zeta) = 2 z.zeta + G(zeta)`` whose stationarity is the fixed point.

    l = 2: ``G = mean_k E[(a_k - tau)^+]``; l >= 3: ``G = sum_u W_u a_u^{p+1}/(p+1)``
    with ``a = zeta^T V zeta``.
    """

    V: np.ndarray  # (U, q, q) distinct matrices
    branch: int  # 2 or 3
    rates: np.ndarray | None = None  # l=2: (K,)
    group: np.ndarray | None = None  # l=2: (K,) index into V
    W: np.ndarray | None = None  # l>=3: (U,) aggregated weights
    p: float = 1.0

    @classmethod
    def from_spec(cls, spec: LimitLawSpec) -> "_ZetaProblem":
        V, rates = spec.paired_sample()
        flat = V.reshape(V.shape[0], -1)
        uniq, inv = np.unique(flat, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        Vu = uniq.reshape(-1, spec.q, spec.q)
        if spec.dim == 2:
            return cls(Vu, 2, rates=np.asarray(rates, dtype=float), group=inv)
        W = np.bincount(inv, weights=rates, minlength=Vu.shape[0]) / rates.size
        return cls(Vu, 3, W=W, p=spec.power())

    def mean_V(self) -> np.ndarray:
        if self.branch == 2:
            counts = np.bincount(self.group, minlength=self.V.shape[0]) / self.group.size
            return np.einsum("u,uqr->qr", counts, self.V)
        return np.einsum("u,uqr->qr", self.W, self.V)

    def terms(self, zeta: np.ndarray):
        """Per draw: G, weight-sum matrix M, and Hessian of G (all batched)."""
        Vz = np.einsum("uqr,dr->duq", self.V, zeta)
        a = np.maximum(np.einsum("dq,duq->du", zeta, Vz), 0.0)
        if self.branch == 2:
            K = self.group.size
            ak = a[:, self.group]
            lam = self.rates[None, :]
            e = np.exp(-lam * ak)
            G = (ak - (-np.expm1(-lam * ak)) / lam).mean(axis=1)
            g1 = np.zeros_like(a)
            g2 = np.zeros_like(a)
            for u in range(a.shape[1]):
                sel = self.group == u
                g1[:, u] = (1.0 - e[:, sel]).sum(axis=1) / K
                g2[:, u] = (lam[:, sel] * e[:, sel]).sum(axis=1) / K
        else:
            p = self.p
            G = (self.W[None, :] * a ** (p + 1)).sum(axis=1) / (p + 1)
            g1 = self.W[None, :] * a**p
            g2 = self.W[None, :] * p * a ** (p - 1) if p != 1 else self.W[None, :] * np.ones_like(a)
        M = np.einsum("du,uqr->dqr", g1, self.V)
        H = M + 2.0 * np.einsum("du,duq,dur->dqr", g2, Vz, Vz)
        return G, M, H

    def correction(self, zeta: np.ndarray, dim: int) -> np.ndarray:
        """Second term of the explicit limit value (per draw)."""
        a = np.maximum(np.einsum("dq,uqr,dr->du", zeta, self.V, zeta), 0.0)
        if self.branch == 2:
            ak = a[:, self.group]
            return (ak * _phi(self.rates[None, :] * ak)).mean(axis=1)
        return (2.0 / (dim + 2)) * (self.W[None, :] * a ** (dim / 2 + 1)).sum(axis=1)


def _solve_zeta_batch(Z: np.ndarray, prob: _ZetaProblem, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    D, q = Z.shape
    zeta = np.zeros((D, q))
    znorm = np.linalg.norm(Z, axis=1)
    active = znorm > 0
    if not active.any():
        return zeta
    Ebar = prob.mean_V()
    pinv = np.linalg.pinv(Ebar)
    d0 = -(Z @ pinv.T)
    if prob.branch == 3:
        # best multiple of d0 along the ray, from the 1-D potential
        Vd = np.einsum("uqr,dr->duq", prob.V, d0)
        ad = np.maximum(np.einsum("dq,duq->du", d0, Vd), 0.0)
        denom = (prob.W[None, :] * ad ** (prob.p + 1)).sum(axis=1)
        num = -(Z * d0).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(denom > 0, (np.maximum(num, 0.0) / denom) ** (1.0 / (2 * prob.p + 1)), 1.0)
        d0 = d0 * s[:, None]
    zeta[active] = d0[active]

    def potential(zt, zz):
        G, _, _ = prob.terms(zt)
        return 2.0 * (zz * zt).sum(axis=1) + G

    idx = np.flatnonzero(active)
    for _ in range(max_iter):
        if idx.size == 0:
            break
        zt, zz = zeta[idx], Z[idx]
        G, M, H = prob.terms(zt)
        resid_vec = zz + np.einsum("dqr,dr->dq", M, zt)
        resid = np.linalg.norm(resid_vec, axis=1)
        done = resid <= tol * (1.0 + np.linalg.norm(zz, axis=1))
        if done.all():
            break
        grad = 2.0 * resid_vec
        step = -np.einsum("dqr,dr->dq", np.linalg.pinv(2.0 * H, rcond=1e-13), grad)
        slope = (grad * step).sum(axis=1)
        bad = ~(slope < 0) | ~np.all(np.isfinite(step), axis=1)
        step[bad] = -grad[bad]
        slope[bad] = -(grad[bad] ** 2).sum(axis=1)
        F0 = 2.0 * (zz * zt).sum(axis=1) + G
        t = np.ones(zt.shape[0])
        trial = zt + t[:, None] * step
        for _ in range(60):
            F1 = potential(trial, zz)
            ok = F1 <= F0 + 1e-4 * t * slope + 1e-15 * np.abs(F0)
            if ok.all():
                break
            t = np.where(ok, t, 0.5 * t)
            trial = zt + t[:, None] * step
        zeta[idx] = np.where(done[:, None], zt, trial)
        idx = idx[~done]
    return zeta


def zeta_residual(z, zeta, spec: LimitLawSpec) -> float:
    prob = _ZetaProblem.from_spec(spec)
    zt = np.atleast_2d(np.asarray(zeta, dtype=float))
    _, M, _ = prob.terms(zt)
    return float(np.linalg.norm(np.asarray(z, dtype=float) + M[0] @ zt[0]))


def solve_zeta_explicit(z, spec: LimitLawSpec, tol: float = 1e-8) -> np.ndarray:
    """``zeta`` with ``z = -E[weight(zeta) V] zeta`` for the explicit l >= 2 laws."""
    if spec.formulation != "explicit" or spec.dim < 2:
        raise ConfigError("zeta is defined for the explicit l >= 2 branches")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (spec.q,):
        raise ValueError("z has the wrong dimension")
    prob = _ZetaProblem.from_spec(spec)
    zeta = _solve_zeta_batch(z[None, :], prob)[0]
    res = zeta_residual(z, zeta, spec)
    if res > tol:
        raise ZetaConvergenceError(res)
    return zeta


# -- samplers ------------------------------------------------------------------

def _explicit_draws(spec: LimitLawSpec, Z: np.ndarray) -> np.ndarray:
    prob = _ZetaProblem.from_spec(spec)
    w, U = np.linalg.eigh(spec.cov)
    rank = int((w > 1e-12 * max(1.0, w.max())).sum())
    if prob.branch == 3 and rank == 1:
        # zeta(t u) = t^{1/(2p+1)} zeta(u) for t > 0: two direction solves suffice
        u = U[:, -1]
        t = Z @ u
        base = _solve_zeta_batch(np.vstack([u, -u]), prob)
        pos = t >= 0
        zeta = np.where(pos[:, None], base[0], base[1]) * (np.abs(t) ** (1.0 / (2 * prob.p + 1)))[:, None]
    else:
        zeta = np.empty_like(Z)
        step = max(1, _CHUNK // max(1, prob.V.shape[0] * spec.q * spec.q * (prob.group.size if prob.branch == 2 else 1)))
        step = min(step, 4096)
        for s in range(0, Z.shape[0], step):
            zeta[s : s + step] = _solve_zeta_batch(Z[s : s + step], prob)
    return -2.0 * (Z * zeta).sum(axis=1) - prob.correction(zeta, spec.dim)


def sample_limit(spec: LimitLawSpec, n_draws: int, seed: int) -> np.ndarray:
    """I.i.d. draws of the limiting variable described by ``spec``."""
    rng = make_rng(seed, 0x11)
    Z = spec.sampler().draw(rng, int(n_draws))
    z2 = (Z * Z).sum(axis=1)
    d = spec.dim
    if spec.formulation in ("mean", "implicit"):
        if d == 1:
            return z2
        if d == 2:
            if spec.tau_law is None:
                raise ConfigError("dimension-2 branch needs a tau law")
            out = np.zeros_like(z2)
            pos = z2 > 0
            rho = _rho_many(z2[pos], spec.tau_law.rates)
            eta = _phi(np.multiply.outer(rho * rho * z2[pos], spec.tau_law.rates)).mean(axis=1)
            out[pos] = rho * (2.0 - eta * rho) * z2[pos]
            return out
        C = spec.constant_C()
        return (2 * d + 2) / (d + 2) * np.sqrt(z2) ** (1 + 1 / (d + 1)) / C ** (1 / (d + 1))
    if d == 1:
        if spec.upsilon is not None:
            ups = np.atleast_2d(np.asarray(spec.upsilon, dtype=float))
        elif spec.v_sample is not None:
            ups = spec.v_sample.mean(axis=0)
        else:
            raise ConfigError("explicit l = 1 branch needs Upsilon or a V sample")
        P = np.linalg.pinv(ups)
        return np.einsum("dq,qr,dr->d", Z, P, Z)
    return _explicit_draws(spec, Z)


def quantile(spec: LimitLawSpec, p: float, n_draws: int = 100_000, seed: int = 0) -> float:
    """Order statistic with index ``ceil(p * n_draws)`` of ``sample_limit`` output."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if n_draws < 1000:
        raise ValueError("at least 1000 draws are required")
    draws = np.sort(sample_limit(spec, n_draws, seed))
    k = math.ceil(p * n_draws - 1e-9)
    return float(draws[k - 1])

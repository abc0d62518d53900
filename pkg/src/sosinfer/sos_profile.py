"""SOS profile function: minimal squared-Wasserstein cost of meeting a moment condition.

All forms reduce to one transport LP over plans ``pi`` on samples x support,
given a cost matrix ``C`` (n x N) and a moment matrix ``H`` (N x q):

    min  sum_ik C_ik pi_ik
    s.t. sum_k pi_ik = 1/n,   sum_ik H_k pi_ik = 0,   pi >= 0.

The mean and implicit forms measure the cost between transformed points, the
explicit form in the original space.
"""

from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import lp_engine
from .errors import ProfileInfeasible
from .pool import MergedPool


@dataclasses.dataclass(frozen=True)
class EstimatingFunction:
    """Vectorised moment map ``h(theta, X) -> (N, q)`` with ``q <= d``."""

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d: int
    q: int
    jac_x: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    jac_nu: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.q > self.d:
            raise ValueError("output dimension q must not exceed parameter dimension d")

    def __call__(self, theta, X) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.d,):
            raise ValueError(f"theta must have dimension {self.d}")
        out = np.asarray(self.func(theta, np.asarray(X, dtype=float)), dtype=float)
        if out.ndim == 1:
            out = out.reshape(-1, 1)
        if out.shape != (len(X), self.q):
            raise ValueError(f"h returned shape {out.shape}, expected {(len(X), self.q)}")
        return out


def centering(dim: int) -> EstimatingFunction:
    """``h(theta, x) = x - theta``; its identity Jacobian makes every form agree."""
    return EstimatingFunction(
        lambda th, X: X - th,
        dim,
        dim,
        jac_x=lambda th, X: np.broadcast_to(np.eye(dim), (len(X), dim, dim)),
    )


@dataclasses.dataclass(frozen=True)
class PlugInEstimate:
    gamma_star: np.ndarray
    nu_n: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([np.atleast_1d(self.gamma_star), np.atleast_1d(self.nu_n)]).astype(float)


@dataclasses.dataclass(frozen=True)
class TransportPlan:
    matrix: sp.csr_matrix

    @property
    def weights(self) -> np.ndarray:
        """Column sums ``w_k``: the candidate measure on the support."""
        return np.asarray(self.matrix.sum(axis=0)).ravel()


@dataclasses.dataclass(frozen=True)
class ProfileEvaluation:
    value: float
    plan: TransportPlan
    dual_lambda: np.ndarray
    dual_gamma: np.ndarray
    duality_gap: float
    pruned: bool = False


def dual_function(cost: np.ndarray, H: np.ndarray, lam: np.ndarray) -> tuple[float, np.ndarray]:
    """Value of the simplified dual at ``lam`` and the induced optimal ``gamma``.

    Rows of ``cost`` are samples; sample ``i`` sits at support index ``i``.
    """
    n = cost.shape[0]
    s = H @ lam
    gamma = np.maximum((s[None, :] - s[:n, None] - cost).max(axis=1), 0.0)
    return float(-s[:n].mean() - gamma.mean()), gamma


def build_plan_lp(
    objective: np.ndarray,
    moment: np.ndarray | None = None,
    budget: tuple[np.ndarray, float] | None = None,
    keep: np.ndarray | None = None,
    maximize: bool = False,
) -> tuple[lp_engine.LinearProgram, np.ndarray]:
    """LP over plans with row sums ``1/n``.

    ``moment`` adds equality rows ``sum_ik H_k pi_ik = 0``; ``budget=(C, delta)``
    adds ``sum_ik C_ik pi_ik <= delta``.  Returns the LP and the flat indices
    ``i*N + k`` of its columns.
    """
    n, N = objective.shape
    flat = np.arange(n * N) if keep is None else np.flatnonzero(keep.ravel())
    ii, kk = np.divmod(flat, N)
    nc = flat.size
    cols = [np.arange(nc)]
    rows = [ii]
    vals = [np.ones(nc)]
    senses = ["="] * n
    rhs = [np.full(n, 1.0 / n)]
    r = n
    if moment is not None:
        for d in range(moment.shape[1]):
            v = moment[kk, d]
            nz = v != 0
            cols.append(np.flatnonzero(nz))
            rows.append(np.full(nz.sum(), r))
            vals.append(v[nz])
            senses.append("=")
            rhs.append(np.zeros(1))
            r += 1
    if budget is not None:
        cmat, delta = budget
        v = cmat.ravel()[flat]
        nz = v != 0
        cols.append(np.flatnonzero(nz))
        rows.append(np.full(nz.sum(), r))
        vals.append(v[nz])
        senses.append("<")
        rhs.append(np.array([float(delta)]))
        r += 1
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, nc))
    lp = lp_engine.LinearProgram.from_matrix(objective.ravel()[flat], A, senses, np.concatenate(rhs), maximize=maximize)
    return lp, flat


def transport_profile(cost: np.ndarray, H: np.ndarray, cutoff: float | None = None) -> ProfileEvaluation:
    """Solve the primal profile LP for a cost matrix and moment matrix."""
    cost = np.asarray(cost, dtype=float)
    H = np.asarray(H, dtype=float)
    n, N = cost.shape
    keep = None
    if cutoff is not None:
        keep = cost <= cutoff
        keep[np.arange(n), np.arange(n)] = True
    lp, flat = build_plan_lp(cost, H, keep=keep)
    sol = lp_engine.solve(lp)
    if sol.status is not lp_engine.Status.OPTIMAL:
        raise ProfileInfeasible("moment condition cannot be met on the support (parameter outside the hull)")
    ii, kk = np.divmod(flat, N)
    x = sol.x
    nz = x > 0
    plan = sp.csr_matrix((x[nz], (ii[nz], kk[nz])), shape=(n, N))
    lam = sol.duals[n:]
    lower, gamma = dual_function(cost, H, lam)
    value = max(sol.objective, 0.0)
    return ProfileEvaluation(value, TransportPlan(plan), lam, gamma, value - lower, pruned=keep is not None)


def hull_support(H: np.ndarray) -> np.ndarray:
    """Indices of a few support points whose convex hull contains 0 in H-space."""
    N, q = H.shape
    A = np.vstack([H.T, np.ones((1, N))])
    lp = lp_engine.LinearProgram.from_matrix(np.zeros(N), A, ["="] * (q + 1), np.r_[np.zeros(q), 1.0])
    sol = lp_engine.solve(lp)
    if sol.status is not lp_engine.Status.OPTIMAL:
        raise ProfileInfeasible("moment condition cannot be met on the support (parameter outside the hull)")
    return np.flatnonzero(sol.x > 0)


def transport_dual(cost: np.ndarray, H: np.ndarray, tol: float = 1e-11, max_rounds: int = 500, per_round: int = 3):
    """Solve the simplified dual LP by constraint generation.

    Variables ``lambda`` (free) and ``gamma >= 0``; one inequality row per
    active pair ``(i, j)``.  Rows are added for the most violated pairs until
    the restricted optimum satisfies every pair.
    """
    cost = np.asarray(cost, dtype=float)
    H = np.asarray(H, dtype=float)
    n, N = cost.shape
    q = H.shape[1]
    support = hull_support(H)
    active = np.zeros((n, N), dtype=bool)
    active[:, support] = True
    active[np.arange(n), np.arange(n)] = False
    hbar = H[:n].mean(axis=0)
    c = np.r_[hbar, np.full(n, 1.0 / n)]
    lb = np.r_[np.full(q, -np.inf), np.zeros(n)]
    for _ in range(max_rounds):
        ii, jj = np.nonzero(active)
        npair = ii.size
        # gamma_i - lambda^T (H_j - H_i) >= -C_ij
        dH = H[jj] - H[ii]
        rows = np.concatenate([np.repeat(np.arange(npair), q), np.arange(npair)])
        cols = np.concatenate([np.tile(np.arange(q), npair), q + ii])
        vals = np.concatenate([-dH.ravel(), np.ones(npair)])
        A = sp.csc_matrix((vals, (rows, cols)), shape=(npair, q + n))
        lp = lp_engine.LinearProgram.from_matrix(c, A, [">"] * npair, -cost[ii, jj], lb=lb)
        sol = lp_engine.solve(lp)
        if sol.status is not lp_engine.Status.OPTIMAL:
            raise lp_engine.LpNumericalError(f"restricted dual returned {sol.status.value}")
        lam, gam = sol.x[:q], sol.x[q:]
        s = H @ lam
        viol = s[None, :] - s[:n, None] - cost - gam[:, None]
        viol[active] = -np.inf
        viol[np.arange(n), np.arange(n)] = -np.inf
        scale = tol * (1.0 + np.abs(cost).max())
        if viol.max() <= scale:
            return -sol.objective, lam, gam
        order = np.argsort(-viol, axis=1)[:, :per_round]
        picked = np.take_along_axis(viol, order, axis=1) > scale
        active[np.repeat(np.arange(n), per_round)[picked.ravel()], order.ravel()[picked.ravel()]] = True
    raise lp_engine.LpNumericalError("constraint generation did not converge")


def _sq_dist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = A[:, None, :] - B[None, :, :]
    return np.einsum("ikd,ikd->ik", d, d)


def _implicit_inputs(pool: MergedPool, h: EstimatingFunction, theta):
    HZ = h(theta, pool.Z)
    return _sq_dist(HZ[: pool.n], HZ), HZ


def _explicit_inputs(pool: MergedPool, h: EstimatingFunction, theta):
    return _sq_dist(pool.X, pool.Z), h(theta, pool.Z)


def profile_implicit(pool: MergedPool, h: EstimatingFunction, theta, cutoff: float | None = None) -> ProfileEvaluation:
    """Transport cost measured between transformed points ``h(theta, .)``."""
    return transport_profile(*_implicit_inputs(pool, h, theta), cutoff=cutoff)


def profile_explicit(pool: MergedPool, h: EstimatingFunction, theta, cutoff: float | None = None) -> ProfileEvaluation:
    """Transport cost in the original space, moment rows from ``h(theta, .)``."""
    return transport_profile(*_explicit_inputs(pool, h, theta), cutoff=cutoff)


def profile_mean(pool: MergedPool, theta, cutoff: float | None = None) -> ProfileEvaluation:
    return profile_implicit(pool, centering(pool.dim), theta, cutoff=cutoff)


def profile_mean_dual(pool: MergedPool, theta) -> float:
    value, _, _ = transport_dual(*_implicit_inputs(pool, centering(pool.dim), theta))
    return value


def profile_dual(pool: MergedPool, h: EstimatingFunction, theta, formulation: str = "implicit") -> float:
    inputs = _implicit_inputs if formulation == "implicit" else _explicit_inputs
    value, _, _ = transport_dual(*inputs(pool, h, theta))
    return value


def profile_plugin(pool: MergedPool, h: EstimatingFunction, estimate: PlugInEstimate, formulation: str = "explicit", cutoff: float | None = None) -> ProfileEvaluation:
    """Profile with the nuisance fixed at its estimate; ``theta = (gamma, nu)``."""
    if formulation == "implicit":
        return profile_implicit(pool, h, estimate.theta, cutoff=cutoff)
    if formulation == "explicit":
        return profile_explicit(pool, h, estimate.theta, cutoff=cutoff)
    raise ValueError(f"unknown formulation {formulation!r}")


def profile_mean_1d(x, theta: float) -> float:
    """Exact mean profile for a scalar sample without scenarios.

    The inner maximisation of the simplified dual is a nearest-neighbour query
    (the best partner of ``x_i`` is the sample point closest to ``x_i + lambda/2``),
    so the dual function is concave piecewise linear in ``lambda``; its maximum
    is located by bisection on the supergradient.
    """
    xs = np.sort(np.asarray(x, dtype=float).ravel())
    n = xs.size
    if not xs[0] <= theta <= xs[-1]:
        raise ProfileInfeasible("theta outside the sample range")
    xbar = xs.mean()

    def partner_shift(lam):
        t = xs + lam / 2.0
        k = np.clip(np.searchsorted(xs, t), 1, n - 1)
        left, right = xs[k - 1], xs[k]
        j = np.where(t - left <= right - t, left, right)
        return j - xs

    def g(lam):
        u = partner_shift(lam)
        return -lam * (xbar - theta) - np.mean(np.maximum(lam * u - u * u, 0.0))

    def slope(lam):
        return theta - xbar - partner_shift(lam).mean()

    s0 = slope(0.0)
    if s0 == 0.0:
        return 0.0
    sign = 1.0 if s0 > 0 else -1.0
    lo, hi = 0.0, sign * 1.0 * max(1.0, xs[-1] - xs[0])
    for _ in range(200):
        if sign * slope(hi) <= 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        return float(max(g(hi), 0.0))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if sign * slope(mid) > 0:
            lo = mid
        else:
            hi = mid
    return float(max(g(lo), g(hi), 0.0))

"""Worst-case expected loss over a Wasserstein ball and SOS confidence intervals."""

from __future__ import annotations

import dataclasses
import math
from typing import Callable

import numpy as np

from . import lp_engine
from .errors import DomainError, ProfileInfeasible
from .limit_laws import LimitLawSpec, quantile, scaling_exponent
from .pool import MergedPool
from .sos_profile import build_plan_lp


@dataclasses.dataclass(frozen=True)
class ConfidenceInterval:
    level: float
    lower: float
    upper: float
    quantile: float = math.nan
    alpha: float = math.nan
    draws: int = 0
    formulation: str = ""
    delta_n: float = math.nan
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.lower > self.upper:
            raise ValueError("lower endpoint exceeds upper endpoint")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def _sq_cost(pool: MergedPool) -> np.ndarray:
    d = pool.X[:, None, :] - pool.Z[None, :, :]
    return np.einsum("ikd,ikd->ik", d, d)


def _bound_lp(loss, cost, delta, sense, moment):
    loss = np.asarray(loss, dtype=float).ravel()
    n, N = cost.shape
    if loss.size != N:
        raise ValueError("one loss value per support point is required")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    obj = np.broadcast_to(loss, (n, N))
    return build_plan_lp(obj, moment, budget=(cost, delta), maximize=(sense == "max"))[0]


def worst_case_bound(
    pool: MergedPool,
    loss_values,
    delta: float,
    sense: str = "max",
    moment: np.ndarray | None = None,
    cost: np.ndarray | None = None,
) -> float:
    """Optimise ``sum_ik L(Z_k) pi_ik`` over plans with transport cost at most ``delta``.

    ``moment`` (N x q) optionally adds the side condition ``sum_ik H_k pi_ik = 0``;
    ``cost`` overrides the squared Euclidean ground cost.
    """
    if sense not in ("max", "min"):
        raise ValueError("sense must be 'max' or 'min'")
    cost = _sq_cost(pool) if cost is None else np.asarray(cost, dtype=float)
    sol = lp_engine.solve(_bound_lp(loss_values, cost, delta, sense, moment))
    if sol.status is not lp_engine.Status.OPTIMAL:
        raise ProfileInfeasible(f"worst-case LP is {sol.status.value}")
    return sol.objective


def ci_endpoints_lp(
    pool: MergedPool,
    loss_values,
    delta: float,
    moment: np.ndarray | None = None,
    cost: np.ndarray | None = None,
) -> tuple[float, float]:
    """``(min, max)`` of the expected loss over the ball; the max solve warm-starts the min."""
    cost = _sq_cost(pool) if cost is None else np.asarray(cost, dtype=float)
    lp_max = _bound_lp(loss_values, cost, delta, "max", moment)
    up = lp_engine.solve(lp_max)
    if up.status is not lp_engine.Status.OPTIMAL:
        raise ProfileInfeasible(f"endpoint LP is {up.status.value}")
    lp_min = dataclasses.replace(lp_max, maximize=False)
    lo = lp_engine.solve(lp_min, warm_basis=up.basis)
    if lo.status is not lp_engine.Status.OPTIMAL:
        raise ProfileInfeasible(f"endpoint LP is {lo.status.value}")
    return lo.objective, up.objective


def calibrate_delta(spec: LimitLawSpec, level: float, n: int, draws: int = 100_000, seed: int = 0) -> float:
    """Radius ``quantile / n^alpha`` for the given limit law."""
    q = quantile(spec, level, draws, seed)
    return q / n ** scaling_exponent(spec.dim, spec.formulation)


def _safe(profile: Callable[[float], float], theta: float) -> float:
    try:
        return float(profile(theta))
    except ProfileInfeasible:
        return math.inf


def _find_feasible(profile, delta_n, a, b, center):
    if center is not None:
        v = _safe(profile, center)
        if v <= delta_n:
            return center, v
    # golden section on the convex profile, falling back to a grid when the
    # probes land outside the hull
    g = (math.sqrt(5) - 1) / 2
    lo, hi = a, b
    x1, x2 = hi - g * (hi - lo), lo + g * (hi - lo)
    f1, f2 = _safe(profile, x1), _safe(profile, x2)
    for _ in range(80):
        if min(f1, f2) <= delta_n:
            return (x1, f1) if f1 <= f2 else (x2, f2)
        if math.isinf(f1) and math.isinf(f2):
            break
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - g * (hi - lo)
            f1 = _safe(profile, x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + g * (hi - lo)
            f2 = _safe(profile, x2)
    for x in np.linspace(a, b, 129):
        v = _safe(profile, float(x))
        if v <= delta_n:
            return float(x), v
    raise DomainError("no parameter value in the bracket has profile below the radius")


def ci_for_scalar_target(
    profile: Callable[[float], float],
    delta_n: float,
    bracket: tuple[float, float],
    level: float = 0.95,
    center: float | None = None,
    xtol: float = 1e-10,
    **meta,
) -> ConfidenceInterval:
    """Level set ``{theta : R(theta) <= delta_n}`` of a convex profile, by bisection."""
    a, b = float(bracket[0]), float(bracket[1])
    if not a < b:
        raise ValueError("bracket must be increasing")
    mid, _ = _find_feasible(profile, delta_n, a, b, center)
    rtol = 1e-6 * (1.0 + delta_n)
    flags = []
    ends = []
    for side, outer in (("lower", a), ("upper", b)):
        v_outer = _safe(profile, outer)
        if v_outer <= delta_n:
            flags.append(f"bracket-{side}")
            ends.append(outer)
            continue
        inside, out = mid, outer
        scale = xtol * (1.0 + abs(a) + abs(b))
        v_in = _safe(profile, inside)
        while abs(out - inside) > scale:
            m = 0.5 * (inside + out)
            if m == inside or m == out:
                break
            v = _safe(profile, m)
            if v <= delta_n:
                inside, v_in = m, v
            else:
                out = m
        if abs(v_in - delta_n) > rtol:
            flags.append(f"hull-{side}")
        ends.append(inside)
    return ConfidenceInterval(level, min(ends), max(ends), delta_n=delta_n, flags=tuple(flags), **meta)

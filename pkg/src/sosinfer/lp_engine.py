"""Bounded-variable revised simplex solver and solution certification.

Every transport problem in the package reduces to one of these LPs.  The
solver keeps an explicit dense basis inverse, updated by rank-one pivots and
rebuilt from scratch every ``REFACTOR_EVERY`` pivots.  Equality rows get
artificial variables and a phase-one objective; no big-M constant is used.

Duals are reported as shadow prices, ``d objective / d b_i``, for the problem
as posed (minimisation or maximisation).
"""

from __future__ import annotations

import dataclasses
import enum
import math
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

REFACTOR_EVERY = 50
FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
STALL_LIMIT = 40


class LpError(Exception):
    """Base class for solver errors."""


class LpNumericalError(LpError):
    """Raised when the basis cannot be factorised or the iteration limit is hit."""


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


_SENSES = ("<", "=", ">")


@dataclasses.dataclass(frozen=True)
class LinearProgram:
    """``min``/``max`` ``c @ x`` subject to ``A x (sense) b`` and ``lb <= x <= ub``."""

    c: np.ndarray
    A: sp.csc_matrix
    senses: tuple[str, ...]
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    maximize: bool = False

    @classmethod
    def from_triplets(
        cls,
        c: Sequence[float],
        rows: Sequence[int],
        cols: Sequence[int],
        vals: Sequence[float],
        senses: Sequence[str],
        b: Sequence[float],
        lb: Sequence[float] | None = None,
        ub: Sequence[float] | None = None,
        maximize: bool = False,
    ) -> "LinearProgram":
        c = np.asarray(c, dtype=float)
        b = np.asarray(b, dtype=float)
        A = sp.csc_matrix(
            (np.asarray(vals, dtype=float), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(b.size, c.size),
        )
        return cls.from_matrix(c, A, senses, b, lb, ub, maximize)

    @classmethod
    def from_matrix(cls, c, A, senses, b, lb=None, ub=None, maximize=False) -> "LinearProgram":
        c = np.asarray(c, dtype=float)
        b = np.asarray(b, dtype=float)
        A = sp.csc_matrix(A, dtype=float)
        A.sum_duplicates()
        nvar = c.size
        lb = np.zeros(nvar) if lb is None else np.asarray(lb, dtype=float)
        ub = np.full(nvar, np.inf) if ub is None else np.asarray(ub, dtype=float)
        return cls(c, A, tuple(senses), b, lb, ub, bool(maximize))

    def __post_init__(self):
        m, nvar = self.A.shape
        if self.c.shape != (nvar,) or self.lb.shape != (nvar,) or self.ub.shape != (nvar,):
            raise ValueError("column count differs between objective, matrix and bounds")
        if self.b.shape != (m,) or len(self.senses) != m:
            raise ValueError("row count differs between matrix, senses and right-hand side")
        if any(s not in _SENSES for s in self.senses):
            raise ValueError(f"row senses must be one of {_SENSES}")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.A.data))):
            raise ValueError("coefficients must be finite")
        if np.any(self.lb > self.ub) or np.any(np.isposinf(self.lb)) or np.any(np.isneginf(self.ub)):
            raise ValueError("inconsistent variable bounds")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclasses.dataclass(frozen=True)
class Snapshot:
    """State after one pivot: phase, primal objective and a Lagrangian lower bound.

    Both numbers refer to the minimisation form of the problem being solved in
    that phase (phase one minimises the sum of artificials).
    """

    phase: int
    entering: int
    leaving: int
    primal: float
    dual_bound: float


@dataclasses.dataclass
class LpSolution:
    status: Status
    x: np.ndarray | None
    duals: np.ndarray | None
    objective: float
    iterations: int
    basis: tuple[int, ...] | None = None
    trace: list[Snapshot] | None = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclasses.dataclass(frozen=True)
class CertificationReport:
    primal_residual: float
    dual_residual: float
    complementarity: float
    duality_gap: float
    primal_objective: float
    dual_objective: float
    primal_tol: float = 1e-8
    dual_tol: float = 1e-8
    comp_tol: float = 1e-7

    @property
    def ok(self) -> bool:
        scale = 1.0 + abs(self.primal_objective)
        return (
            self.primal_residual <= self.primal_tol
            and self.dual_residual <= self.dual_tol
            and self.complementarity <= self.comp_tol * scale
            and self.duality_gap <= 1e-8 * scale
        )

    def flags(self) -> list[str]:
        out = []
        if self.primal_residual > self.primal_tol:
            out.append("primal")
        if self.dual_residual > self.dual_tol:
            out.append("dual")
        if self.complementarity > self.comp_tol * (1.0 + abs(self.primal_objective)):
            out.append("complementarity")
        if self.duality_gap > 1e-8 * (1.0 + abs(self.primal_objective)):
            out.append("gap")
        return out


# state codes for nonbasic variables
_BASIC, _AT_LO, _AT_HI, _FREE_ZERO, _FIXED = 0, 1, 2, 3, 4


class _Simplex:
    """One-shot solver over the scaled standard form ``A x = b, lo <= x <= hi``."""

    def __init__(self, lp: LinearProgram, max_iter: int | None, trace: bool):
        self.lp = lp
        m, nvar = lp.shape
        self.m, self.nvar = m, nvar
        A = lp.A.tocsc()

        # max-abs scaling, rows first then columns
        absA = abs(A)
        rmax = np.asarray(absA.max(axis=1).todense()).ravel()
        rs = np.where(rmax > 0, 1.0 / np.where(rmax > 0, rmax, 1.0), 1.0)
        A = sp.csc_matrix(sp.diags(rs) @ A)
        cmax = np.asarray(abs(A).max(axis=0).todense()).ravel()
        cs = np.where(cmax > 0, 1.0 / np.where(cmax > 0, cmax, 1.0), 1.0)
        A = sp.csc_matrix(A @ sp.diags(cs))
        self.rs, self.cs = rs, cs

        c = lp.c * cs * (-1.0 if lp.maximize else 1.0)
        cmax_obj = np.max(np.abs(c)) if c.size else 0.0
        self.cscale = cmax_obj if cmax_obj > 0 else 1.0
        c = c / self.cscale

        lo = lp.lb / cs
        hi = lp.ub / cs
        b = lp.b * rs

        # slacks: '<' row gets s in [0, inf), '>' row gets s in (-inf, 0]
        ineq = [i for i, s in enumerate(lp.senses) if s != "="]
        self.n_slack = len(ineq)
        s_lo = np.array([0.0 if lp.senses[i] == "<" else -np.inf for i in ineq])
        s_hi = np.array([np.inf if lp.senses[i] == "<" else 0.0 for i in ineq])
        S = sp.csc_matrix((np.ones(len(ineq)), (np.array(ineq, dtype=np.int64), np.arange(len(ineq)))), shape=(m, len(ineq)))

        self.A = sp.hstack([A, S], format="csc")
        self.c = np.concatenate([c, np.zeros(len(ineq))])
        self.lo = np.concatenate([lo, s_lo])
        self.hi = np.concatenate([hi, s_hi])
        self.b = b
        self.slack_of_row = {i: nvar + j for j, i in enumerate(ineq)}
        self.n_real = self.A.shape[1]
        self.max_iter = max_iter if max_iter is not None else 50 * (m + self.n_real) + 1000
        self.iterations = 0
        self.trace: list[Snapshot] | None = [] if trace else None

    # -- column access -------------------------------------------------
    def _build_column_store(self):
        A = self.A
        self.indptr, self.indices, self.data = A.indptr, A.indices, A.data
        self.AT = A.T.tocsr()
        norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=0)).ravel())
        self.weights = np.sqrt(1.0 + norms * norms)

    def _column(self, j: int) -> np.ndarray:
        col = np.zeros(self.m)
        p0, p1 = self.indptr[j], self.indptr[j + 1]
        col[self.indices[p0:p1]] = self.data[p0:p1]
        return col

    def _ftran(self, j: int) -> np.ndarray:
        p0, p1 = self.indptr[j], self.indptr[j + 1]
        return self.Binv[:, self.indices[p0:p1]] @ self.data[p0:p1]

    # -- basis management ----------------------------------------------
    def _refactor(self):
        B = np.empty((self.m, self.m))
        for r, j in enumerate(self.basis):
            B[:, r] = self._column(j)
        try:
            lu, piv = scipy.linalg.lu_factor(B, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover - defensive
            raise LpNumericalError(f"basis factorisation failed: {exc}") from exc
        diag = np.abs(np.diag(lu))
        if diag.size and (diag.min() <= 1e-11 * max(1.0, diag.max()) or not np.all(np.isfinite(diag))):
            raise LpNumericalError("singular basis")
        self.Binv = scipy.linalg.lu_solve((lu, piv), np.eye(self.m), check_finite=False)
        self.pivots_since_refactor = 0
        self._recompute_xb()

    def _recompute_xb(self):
        xN = self.x.copy()
        xN[self.basis] = 0.0
        self.x[self.basis] = self.Binv @ (self.b - self.A @ xN)

    def _nonbasic_start(self, j: int) -> tuple[int, float]:
        lo, hi = self.lo[j], self.hi[j]
        if lo == hi:
            return _FIXED, lo
        if np.isfinite(lo):
            return _AT_LO, lo
        if np.isfinite(hi):
            return _AT_HI, hi
        return _FREE_ZERO, 0.0

    def _cold_start(self):
        """Slack basis where feasible, artificials elsewhere."""
        n = self.n_real
        self.state = np.empty(n, dtype=np.int8)
        self.x = np.zeros(n)
        for j in range(n):
            self.state[j], self.x[j] = self._nonbasic_start(j)
        resid = self.b - self.A @ self.x
        basis = []
        art_rows, art_signs = [], []
        for i in range(self.m):
            j = self.slack_of_row.get(i)
            if j is not None and self.lo[j] - FEAS_TOL <= resid[i] <= self.hi[j] + FEAS_TOL:
                basis.append(j)
                self.state[j] = _BASIC
                self.x[j] = resid[i]
            else:
                art_rows.append(i)
                art_signs.append(1.0 if resid[i] >= 0 else -1.0)
                basis.append(-1)
        k = len(art_rows)
        if k:
            Art = sp.csc_matrix((np.array(art_signs), (np.array(art_rows, dtype=np.int64), np.arange(k))), shape=(self.m, k))
            self.A = sp.hstack([self.A, Art], format="csc")
            self.c = np.concatenate([self.c, np.zeros(k)])
            self.lo = np.concatenate([self.lo, np.zeros(k)])
            self.hi = np.concatenate([self.hi, np.full(k, np.inf)])
            self.state = np.concatenate([self.state, np.full(k, _BASIC, dtype=np.int8)])
            self.x = np.concatenate([self.x, np.abs(resid[art_rows])])
            for a, i in enumerate(art_rows):
                basis[i] = n + a
        self.n_art = k
        self.basis = np.array(basis, dtype=np.int64)
        self._build_column_store()
        # cold basis is a signed identity, its inverse is immediate
        self.Binv = np.zeros((self.m, self.m))
        for r, j in enumerate(self.basis):
            self.Binv[r, r] = 1.0 / self._column(j)[r]
        self.pivots_since_refactor = 0

    def _warm_start(self, basis: Sequence[int]) -> bool:
        basis = np.asarray(basis, dtype=np.int64)
        if basis.shape != (self.m,) or np.any(basis < 0) or np.any(basis >= self.n_real) or len(set(basis.tolist())) != self.m:
            return False
        n = self.n_real
        self.state = np.empty(n, dtype=np.int8)
        self.x = np.zeros(n)
        for j in range(n):
            self.state[j], self.x[j] = self._nonbasic_start(j)
        self.state[basis] = _BASIC
        self.basis = basis.copy()
        self.n_art = 0
        self._build_column_store()
        try:
            self._refactor()
        except LpNumericalError:
            return False
        xb = self.x[self.basis]
        if np.any(xb < self.lo[self.basis] - FEAS_TOL) or np.any(xb > self.hi[self.basis] + FEAS_TOL):
            return False
        return True

    # -- main loop -----------------------------------------------------
    def _lagrangian_bound(self, cost: np.ndarray, d: np.ndarray, y: np.ndarray, active: np.ndarray) -> float:
        lo, hi = self.lo[active], self.hi[active]
        dj = d[active]
        with np.errstate(invalid="ignore"):
            terms = np.where(dj > 0, dj * lo, np.where(dj < 0, dj * hi, 0.0))
        if np.any(np.isnan(terms)) or np.any(np.isneginf(terms)):
            return -np.inf
        return float(self.b @ y + terms.sum())

    def _run(self, cost: np.ndarray, phase: int) -> Status:
        bland = False
        stall = 0
        last_obj = float(cost @ self.x)
        eligible_cols = self.state != _FIXED
        if phase == 2 and self.n_art:
            eligible_cols[self.n_real:] = False
        while True:
            if self.iterations >= self.max_iter:
                raise LpNumericalError(f"iteration limit {self.max_iter} reached")
            if self.pivots_since_refactor >= REFACTOR_EVERY:
                self._refactor()
            y = cost[self.basis] @ self.Binv
            d = cost - self.AT @ y
            st = self.state
            cand = eligible_cols & (
                ((st == _AT_LO) & (d < -OPT_TOL))
                | ((st == _AT_HI) & (d > OPT_TOL))
                | ((st == _FREE_ZERO) & (np.abs(d) > OPT_TOL))
            )
            idx = np.flatnonzero(cand)
            if idx.size == 0:
                return Status.OPTIMAL
            if bland:
                q = int(idx[0])
            else:
                q = int(idx[np.argmax(np.abs(d[idx]) / self.weights[idx])])
            direction = 1.0 if d[q] < 0 else -1.0
            alpha = self._ftran(q)
            delta = direction * alpha  # x_B(t) = x_B - t * delta

            xb = self.x[self.basis]
            lob, hib = self.lo[self.basis], self.hi[self.basis]
            dec = delta > PIVOT_TOL
            inc = delta < -PIVOT_TOL
            ratios = np.full(self.m, np.inf)
            relaxed = np.full(self.m, np.inf)
            with np.errstate(invalid="ignore", divide="ignore"):
                ratios[dec] = (xb[dec] - lob[dec]) / delta[dec]
                relaxed[dec] = (xb[dec] - lob[dec] + FEAS_TOL) / delta[dec]
                ratios[inc] = (hib[inc] - xb[inc]) / -delta[inc]
                relaxed[inc] = (hib[inc] - xb[inc] + FEAS_TOL) / -delta[inc]
            ratios = np.where(np.isnan(ratios), np.inf, np.maximum(ratios, 0.0))
            relaxed = np.where(np.isnan(relaxed), np.inf, np.maximum(relaxed, 0.0))
            span = self.hi[q] - self.lo[q]

            r = -1
            t = span
            if np.any(np.isfinite(ratios)):
                if bland:
                    tmin = ratios.min()
                    ties = np.flatnonzero(ratios <= tmin)
                    r = int(ties[np.argmin(self.basis[ties])])
                    t_r = tmin
                else:
                    tmax = relaxed.min()
                    pool = np.flatnonzero(ratios <= tmax)
                    r = int(pool[np.argmax(np.abs(delta[pool]))])
                    t_r = ratios[r]
                if t_r < span:
                    t = t_r
                else:
                    r = -1
            if not np.isfinite(t):
                return Status.UNBOUNDED

            self.x[self.basis] = xb - t * delta
            self.x[q] += direction * t
            leaving = -1
            if r < 0:
                # bound flip of the entering variable
                self.state[q] = _AT_HI if direction > 0 else _AT_LO
                self.x[q] = self.hi[q] if direction > 0 else self.lo[q]
            else:
                leaving = int(self.basis[r])
                if delta[r] > 0:
                    self.state[leaving], self.x[leaving] = _AT_LO, self.lo[leaving]
                else:
                    self.state[leaving], self.x[leaving] = _AT_HI, self.hi[leaving]
                if self.lo[leaving] == self.hi[leaving]:
                    self.state[leaving] = _FIXED
                if phase == 1 and leaving >= self.n_real:
                    # artificials never re-enter
                    self.state[leaving] = _FIXED
                    self.hi[leaving] = 0.0
                    self.x[leaving] = 0.0
                    eligible_cols[leaving] = False
                self.state[q] = _BASIC
                self.basis[r] = q
                piv = alpha[r]
                row_r = self.Binv[r] / piv
                self.Binv -= np.outer(alpha, row_r)
                self.Binv[r] = row_r
                self.pivots_since_refactor += 1
            self.iterations += 1

            obj = float(cost @ self.x)
            if obj < last_obj - 1e-12 * (1.0 + abs(last_obj)):
                stall = 0
                bland = False
            else:
                stall += 1
                if stall >= STALL_LIMIT:
                    bland = True
            last_obj = obj
            if self.trace is not None:
                y2 = cost[self.basis] @ self.Binv
                d2 = cost - self.AT @ y2
                bound = self._lagrangian_bound(cost, d2, y2, np.ones(d2.size, dtype=bool))
                self.trace.append(Snapshot(phase, q, leaving, obj, bound))

    def _drive_out_artificials(self):
        """Pivot zero-level artificials out of the basis where possible."""
        for r in range(self.m):
            j = self.basis[r]
            if j < self.n_real:
                continue
            row = self.Binv[r] @ self.A[:, : self.n_real]
            row = np.asarray(row).ravel()
            row[self.state[: self.n_real] == _BASIC] = 0.0
            row[self.lo[: self.n_real] == self.hi[: self.n_real]] = 0.0
            k = int(np.argmax(np.abs(row)))
            if abs(row[k]) <= 1e-7:
                # redundant row; the artificial stays basic, fixed at zero
                self.hi[j] = 0.0
                continue
            alpha = self._ftran(k)
            self.state[k] = _BASIC
            self.state[j] = _FIXED
            self.x[j] = 0.0
            self.hi[j] = 0.0
            self.basis[r] = k
            piv = alpha[r]
            row_r = self.Binv[r] / piv
            self.Binv -= np.outer(alpha, row_r)
            self.Binv[r] = row_r
            self.pivots_since_refactor += 1
        self._refactor()

    def solve(self, warm_basis=None) -> LpSolution:
        started_warm = warm_basis is not None and self._warm_start(warm_basis)
        if not started_warm:
            self._cold_start()
            if self.n_art:
                cost1 = np.zeros(self.A.shape[1])
                cost1[self.n_real:] = 1.0
                self._run(cost1, phase=1)
                infeas = float(self.x[self.n_real:].sum())
                if infeas > FEAS_TOL * max(1.0, self.m ** 0.5):
                    return LpSolution(Status.INFEASIBLE, None, None, math.nan, self.iterations, trace=self.trace)
                self._drive_out_artificials()
        cost = self.c
        status = self._run(cost, phase=2)
        if status is Status.UNBOUNDED:
            return LpSolution(status, None, None, -math.inf if not self.lp.maximize else math.inf, self.iterations, trace=self.trace)
        self._refactor()
        y = cost[self.basis] @ self.Binv
        x = self.x[: self.nvar] * self.cs
        lo, hi = self.lp.lb, self.lp.ub
        x = np.minimum(np.maximum(x, lo), hi)
        duals = y * self.rs * self.cscale
        if self.lp.maximize:
            duals = -duals
        basis = None
        if np.all(self.basis < self.n_real):
            basis = tuple(int(j) for j in self.basis)
        return LpSolution(Status.OPTIMAL, x, duals, float(self.lp.c @ x), self.iterations, basis, self.trace)


def solve(lp: LinearProgram, *, warm_basis: Sequence[int] | None = None, max_iter: int | None = None, trace: bool = False) -> LpSolution:
    """Solve ``lp`` by the two-phase revised simplex method.

    ``warm_basis`` lists standard-form column indices (structural columns then
    one slack per inequality row, in row order); it is used when it is
    nonsingular and primal feasible, otherwise the solve starts cold.
    """
    return _Simplex(lp, max_iter, trace).solve(warm_basis)


def certify(lp: LinearProgram, sol: LpSolution) -> CertificationReport:
    """Primal/dual residuals, complementary slackness and the duality gap of ``sol``."""
    x = np.asarray(sol.x, dtype=float)
    y = np.asarray(sol.duals, dtype=float)
    sign = -1.0 if lp.maximize else 1.0
    c = sign * lp.c
    ymin = sign * y  # duals of the minimisation form
    Ax = lp.A @ x
    senses = np.array(lp.senses)
    viol = np.zeros(lp.b.size)
    eq = senses == "="
    le = senses == "<"
    ge = senses == ">"
    viol[eq] = np.abs(Ax[eq] - lp.b[eq])
    viol[le] = np.maximum(Ax[le] - lp.b[le], 0.0)
    viol[ge] = np.maximum(lp.b[ge] - Ax[ge], 0.0)
    bviol = np.maximum(np.maximum(lp.lb - x, x - lp.ub), 0.0)
    primal_res = float(max(viol.max(initial=0.0), bviol.max(initial=0.0)))

    d = c - lp.A.T @ ymin
    fin_lo, fin_hi = np.isfinite(lp.lb), np.isfinite(lp.ub)
    dres = np.where(fin_lo & fin_hi, 0.0, np.where(fin_lo, np.maximum(-d, 0.0), np.where(fin_hi, np.maximum(d, 0.0), np.abs(d))))
    rres = np.zeros(lp.b.size)
    rres[le] = np.maximum(ymin[le], 0.0)
    rres[ge] = np.maximum(-ymin[ge], 0.0)
    dual_res = float(max(dres.max(initial=0.0), rres.max(initial=0.0)))

    row_slack = np.abs(Ax - lp.b)
    comp = float(np.sum(np.abs(ymin) * row_slack * (~eq)))
    with np.errstate(invalid="ignore"):
        gap_lo = np.where(d > 0, np.where(fin_lo, x - lp.lb, 0.0), 0.0)
        gap_hi = np.where(d < 0, np.where(fin_hi, lp.ub - x, 0.0), 0.0)
    comp += float(np.sum(np.abs(d) * (gap_lo + gap_hi)))

    primal_obj = float(c @ x)
    lo_t = np.where(fin_lo, lp.lb, x)
    hi_t = np.where(fin_hi, lp.ub, x)
    bterm = np.where(d > 0, d * lo_t, np.where(d < 0, d * hi_t, 0.0))
    dual_obj = float(lp.b @ ymin + bterm.sum())
    gap = abs(primal_obj - dual_obj)
    return CertificationReport(primal_res, dual_res, comp, gap, sign * primal_obj, sign * dual_obj)


def write_mps(lp: LinearProgram, path, name: str = "SOSLP") -> None:
    """Dump ``lp`` in fixed-width MPS for cross-checking with external solvers."""
    m, nvar = lp.shape
    kind = {"<": "L", "=": "E", ">": "G"}
    A = lp.A.tocsc()
    lines = [f"NAME          {name}"]
    if lp.maximize:
        lines += ["OBJSENSE", "    MAX"]
    lines.append("ROWS")
    lines.append(" N  OBJ")
    lines += [f" {kind[s]}  R{i}" for i, s in enumerate(lp.senses)]
    lines.append("COLUMNS")
    for j in range(nvar):
        if lp.c[j] != 0:
            lines.append(f"    X{j:<8} {'OBJ':<8}  {lp.c[j]:>12.6g}")
        for p in range(A.indptr[j], A.indptr[j + 1]):
            lines.append(f"    X{j:<8} R{A.indices[p]:<7}  {A.data[p]:>12.6g}")
    lines.append("RHS")
    lines += [f"    RHS       R{i:<7}  {v:>12.6g}" for i, v in enumerate(lp.b) if v != 0]
    lines.append("BOUNDS")
    for j in range(nvar):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo == hi:
            lines.append(f" FX BND       X{j:<8} {lo:>12.6g}")
            continue
        if np.isneginf(lo) and np.isposinf(hi):
            lines.append(f" FR BND       X{j:<8}")
            continue
        if np.isneginf(lo):
            lines.append(f" MI BND       X{j:<8}")
        elif lo != 0:
            lines.append(f" LO BND       X{j:<8} {lo:>12.6g}")
        if np.isfinite(hi):
            lines.append(f" UP BND       X{j:<8} {hi:>12.6g}")
    lines.append("ENDATA")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

"""Bounded-variable revised primal simplex.

The instance is brought into the internal form ``M z = b, 0 <= z <= u``:
finite lower bounds are shifted to zero, variables bounded only above are
mirrored, free variables are split and every inequality row receives a
slack.  Phase 1 minimizes the sum of artificial variables; phase 2 the true
objective.  The basis inverse is held as a dense LU factorization plus a
product of eta matrices and is refactorized every ``refactor_every`` pivots.

Pricing is Dantzig's largest reduced cost.  After ``stall_limit``
consecutive degenerate pivots the method switches to Bland's smallest-index
rule until the objective moves again, which rules out cycling.  The method
always stops at a basic solution, so it returns vertices of the feasible
polyhedron.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .instance import EQ, GE, LE, MilpInstance

logger = logging.getLogger(__name__)

OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"


class SolverError(RuntimeError):
    """Numerical breakdown or iteration limit inside the LP solver."""


@dataclass(frozen=True)
class LpSolution:
    status: str
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    objective: float = math.nan
    reduced_costs: np.ndarray | None = None
    basis: tuple = ()
    var_status: tuple = ()
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Factor:
    """LU of the basis matrix with an eta file for rank-one updates."""

    def __init__(self, B: np.ndarray):
        self.lu = linalg.lu_factor(B, check_finite=False)
        diag = np.abs(np.diag(self.lu[0]))
        if diag.size and diag.min() < 1e-11 * max(1.0, diag.max()):
            raise SolverError("singular basis matrix")
        self.etas: list[tuple[int, np.ndarray]] = []

    def ftran(self, a: np.ndarray) -> np.ndarray:
        x = linalg.lu_solve(self.lu, a, check_finite=False)
        for r, alpha in self.etas:
            xr = x[r] / alpha[r]
            x -= alpha * xr
            x[r] = xr
        return x

    def btran(self, c: np.ndarray) -> np.ndarray:
        v = np.array(c, dtype=float)
        for r, alpha in reversed(self.etas):
            vr = v[r]
            v[r] = (vr - (alpha @ v - alpha[r] * vr)) / alpha[r]
        return linalg.lu_solve(self.lu, v, trans=1, check_finite=False)

    def update(self, r: int, alpha: np.ndarray):
        self.etas.append((r, alpha.copy()))


class _Internal:
    """Internal standard form and the map back to the caller's variables."""

    def __init__(self, lp: MilpInstance):
        A = lp.A.toarray()
        m, n = A.shape
        b = lp.rhs.astype(float).copy()
        cols, cost, upper, origin = [], [], [], []
        for j in range(n):
            lo, hi, cj, a = lp.lb[j], lp.ub[j], lp.c[j], A[:, j]
            if lo > hi:
                raise _Infeasible
            if math.isfinite(lo):
                b -= a * lo
                cols.append(a); cost.append(cj); upper.append(hi - lo); origin.append((j, 1.0, lo))
            elif math.isfinite(hi):
                b -= a * hi
                cols.append(-a); cost.append(-cj); upper.append(math.inf); origin.append((j, -1.0, hi))
            else:
                cols.append(a); cost.append(cj); upper.append(math.inf); origin.append((j, 1.0, 0.0))
                cols.append(-a); cost.append(-cj); upper.append(math.inf); origin.append((j, -1.0, 0.0))
        self.n_struct = len(cols)
        slack_sign = np.where(lp.senses == LE, 1.0, np.where(lp.senses == GE, -1.0, 0.0))
        self.slack_of_row = np.full(m, -1)
        for i in range(m):
            if slack_sign[i] != 0.0:
                e = np.zeros(m)
                e[i] = slack_sign[i]
                self.slack_of_row[i] = len(cols)
                cols.append(e); cost.append(0.0); upper.append(math.inf); origin.append((-1, 0.0, 0.0))
        self.flip = np.where(b < 0, -1.0, 1.0)
        M = np.column_stack(cols) if cols else np.zeros((m, 0))
        M = M * self.flip[:, None]
        b = b * self.flip
        # artificials, only where no slack with +1 coefficient can start basic
        basis = []
        self.n_art_start = M.shape[1]
        art_cols = []
        for i in range(m):
            s = self.slack_of_row[i]
            if s >= 0 and M[i, s] > 0:
                basis.append(s)
            else:
                e = np.zeros(m)
                e[i] = 1.0
                basis.append(self.n_art_start + len(art_cols))
                art_cols.append(e)
        if art_cols:
            M = np.hstack([M, np.column_stack(art_cols)])
        self.M = M
        self.b = b
        self.cost = np.concatenate([np.asarray(cost, float), np.zeros(len(art_cols))])
        self.upper = np.concatenate([np.asarray(upper, float), np.full(len(art_cols), math.inf)])
        self.is_art = np.zeros(M.shape[1], dtype=bool)
        self.is_art[self.n_art_start:] = True
        self.origin = origin
        self.basis = np.array(basis, dtype=int)
        self.n_orig = n


class _Infeasible(Exception):
    pass


class _Simplex:
    def __init__(self, form: _Internal, opt_tol: float, feas_tol: float, max_iter: int,
                 refactor_every: int, stall_limit: int, trace: bool):
        self.f = form
        self.m, self.N = form.M.shape
        self.opt_tol = opt_tol
        self.feas_tol = feas_tol
        self.max_iter = max_iter
        self.refactor_every = refactor_every
        self.stall_limit = stall_limit
        self.trace = trace
        self.at_upper = np.zeros(self.N, dtype=bool)
        self.is_basic = np.zeros(self.N, dtype=bool)
        self.is_basic[form.basis] = True
        self.iterations = 0
        self._refactor()

    # basis bookkeeping ---------------------------------------------------
    def _nonbasic_values(self) -> np.ndarray:
        z = np.where(self.at_upper, self.f.upper, 0.0)
        z[self.is_basic] = 0.0
        return z

    def _refactor(self):
        self.factor = _Factor(self.f.M[:, self.f.basis])
        z = self._nonbasic_values()
        self.xB = self.factor.ftran(self.f.b - self.f.M @ z)

    def values(self) -> np.ndarray:
        z = self._nonbasic_values()
        z[self.f.basis] = self.xB
        return z

    # main loop -------------------------------------------------------------
    def run(self, cost: np.ndarray, eligible: np.ndarray, phase: int) -> str:
        f = self.f
        degenerate_run = 0
        bland = False
        while True:
            if self.iterations >= self.max_iter:
                raise SolverError(f"iteration limit {self.max_iter} reached")
            y = self.factor.btran(cost[f.basis])
            d = cost - f.M.T @ y
            movable = eligible & ~self.is_basic & (f.upper > 0)
            improve_up = movable & ~self.at_upper & (d < -self.opt_tol)
            improve_down = movable & self.at_upper & (d > self.opt_tol)
            candidates = np.flatnonzero(improve_up | improve_down)
            if candidates.size == 0:
                return OPTIMAL
            if bland:
                q = int(candidates[0])
            else:
                q = int(candidates[np.argmax(np.abs(d[candidates]))])
            direction = 1.0 if not self.at_upper[q] else -1.0
            alpha = self.factor.ftran(f.M[:, q])
            rate = direction * alpha
            uB = f.upper[f.basis]
            piv = 1e-9
            ratios = np.full(self.m, math.inf)
            dec = rate > piv
            ratios[dec] = np.maximum(self.xB[dec], 0.0) / rate[dec]
            inc = (rate < -piv) & np.isfinite(uB)
            ratios[inc] = np.maximum(uB[inc] - self.xB[inc], 0.0) / (-rate[inc])
            t_row = ratios.min() if self.m else math.inf
            t_flip = f.upper[q]
            if not math.isfinite(t_row) and not math.isfinite(t_flip):
                return UNBOUNDED
            self.iterations += 1
            if t_flip <= t_row:
                t = t_flip
                self.xB -= t * rate
                self.at_upper[q] = not self.at_upper[q]
                r = -1
            else:
                t = t_row
                ties = np.flatnonzero(ratios <= t_row + 1e-12)
                if bland:
                    r = int(ties[np.argmin(f.basis[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(alpha[ties]))])
                leaving = f.basis[r]
                self.xB -= t * rate
                entering_value = t if direction > 0 else f.upper[q] - t
                self.at_upper[leaving] = bool(rate[r] < 0)
                self.is_basic[leaving] = False
                self.is_basic[q] = True
                self.at_upper[q] = False
                f.basis[r] = q
                self.xB[r] = entering_value
                self.factor.update(r, alpha)
                if len(self.factor.etas) >= self.refactor_every:
                    self._refactor()
            if self.trace:
                logger.debug("phase %d pivot %d: enter %d leave %s step %.3g obj %.9g", phase,
                             self.iterations, q, "flip" if r < 0 else f.basis[r], t,
                             float(cost @ self.values()))
            if t <= 1e-12:
                degenerate_run += 1
                if degenerate_run > self.stall_limit:
                    bland = True
            else:
                degenerate_run = 0
                bland = False

    def drive_out_artificials(self):
        f = self.f
        for r in range(self.m):
            if not f.is_art[f.basis[r]]:
                continue
            e = np.zeros(self.m)
            e[r] = 1.0
            rho = self.factor.btran(e)
            row = rho @ f.M
            cand = np.flatnonzero(~self.is_basic & ~f.is_art & (np.abs(row) > 1e-7))
            if cand.size == 0:
                continue  # redundant row
            q = int(cand[np.argmax(np.abs(row[cand]))])
            alpha = self.factor.ftran(f.M[:, q])
            zq = f.upper[q] if self.at_upper[q] else 0.0
            t = self.xB[r] / alpha[r]
            self.xB -= t * alpha
            leaving = f.basis[r]
            self.is_basic[leaving] = False
            self.is_basic[q] = True
            self.at_upper[q] = False
            f.basis[r] = q
            self.xB[r] = zq + t
            self.factor.update(r, alpha)
        self._refactor()


def simplex_solve(lp: MilpInstance, *, opt_tol: float = 1e-9, feas_tol: float = 1e-7,
                  max_iter: int | None = None, refactor_every: int = 100,
                  stall_limit: int = 50, trace: bool = False) -> LpSolution:
    """Solve the continuous relaxation of ``lp`` and return a vertex optimum.

    Infeasible and unbounded programs are reported through ``status``;
    numerical breakdown raises :class:`SolverError`.
    """
    lp = _drop_empty_rows(lp)
    if lp is None:
        return LpSolution(status=INFEASIBLE)
    lp, kept_rows, m_orig = lp
    try:
        form = _Internal(lp)
    except _Infeasible:
        return LpSolution(status=INFEASIBLE)
    m = form.M.shape[0]
    if max_iter is None:
        max_iter = 50 * (m + form.M.shape[1]) + 1000
    if m == 0:
        return _solve_without_rows(lp, form, kept_rows, m_orig)

    solver = _Simplex(form, opt_tol, feas_tol, max_iter, refactor_every, stall_limit, trace)
    if form.is_art.any():
        phase1_cost = form.is_art.astype(float)
        solver.run(phase1_cost, np.ones(form.M.shape[1], dtype=bool), phase=1)
        infeas = float(phase1_cost @ solver.values())
        if infeas > feas_tol * max(1.0, float(np.abs(form.b).max(initial=0.0))):
            return LpSolution(status=INFEASIBLE, iterations=solver.iterations)
        solver.drive_out_artificials()
    form.upper[form.is_art] = 0.0
    status = solver.run(form.cost, ~form.is_art, phase=2)
    if status == UNBOUNDED:
        return LpSolution(status=UNBOUNDED, iterations=solver.iterations)
    # one clean refactorization before reading off primal and dual values
    solver._refactor()
    z = solver.values()
    y_int = solver.factor.btran(form.cost[form.basis])
    return _assemble(lp, form, z, y_int, solver, kept_rows, m_orig)


def _assemble(lp, form, z, y_int, solver, kept_rows, m_orig) -> LpSolution:
    x = np.zeros(form.n_orig)
    # split free variables carry shift 0 on both halves, giving x = z+ - z-
    for col, (j, sign, shift) in enumerate(form.origin[: form.n_struct]):
        x[j] += shift + sign * z[col]
    y_rows = y_int * form.flip
    duals = np.zeros(m_orig)
    duals[kept_rows] = y_rows
    reduced = lp.c - lp.A.T @ y_rows
    var_status = []
    basic_cols = set(int(b) for b in form.basis)
    for col, (j, sign, shift) in enumerate(form.origin[: form.n_struct]):
        if col in basic_cols:
            var_status.append("basic")
        elif solver.at_upper[col]:
            var_status.append("upper" if sign > 0 else "lower")
        else:
            var_status.append("lower" if sign > 0 and math.isfinite(lp.lb[j]) else
                              ("upper" if sign < 0 and math.isfinite(lp.ub[j]) else "free"))
    return LpSolution(
        status=OPTIMAL,
        x=x,
        duals=duals,
        objective=float(lp.c @ x + lp.offset),
        reduced_costs=np.asarray(reduced).ravel(),
        basis=tuple(int(b) for b in form.basis),
        var_status=tuple(var_status),
        iterations=solver.iterations,
    )


def _solve_without_rows(lp, form, kept_rows, m_orig) -> LpSolution:
    x = np.zeros(form.n_orig)
    for j in range(form.n_orig):
        lo, hi, cj = lp.lb[j], lp.ub[j], lp.c[j]
        if cj > 0:
            val = lo
        elif cj < 0:
            val = hi
        else:
            val = lo if math.isfinite(lo) else (hi if math.isfinite(hi) else 0.0)
        if not math.isfinite(val):
            return LpSolution(status=UNBOUNDED)
        x[j] = val
    return LpSolution(status=OPTIMAL, x=x, duals=np.zeros(m_orig),
                      objective=float(lp.c @ x + lp.offset), reduced_costs=lp.c.copy())


def _drop_empty_rows(lp: MilpInstance):
    counts = np.diff(lp.A.tocsr().indptr)
    empty = counts == 0
    m_orig = lp.num_rows
    if not empty.any():
        return lp, np.arange(m_orig), m_orig
    for i in np.flatnonzero(empty):
        s, b = lp.senses[i], lp.rhs[i]
        if (s == LE and b < -1e-9) or (s == GE and b > 1e-9) or (s == EQ and abs(b) > 1e-9):
            return None
    keep = np.flatnonzero(~empty)
    reduced = MilpInstance(lp.A[keep], lp.senses[keep], lp.rhs[keep], lp.c, lp.lb, lp.ub,
                           lp.kinds, lp.var_names, tuple(lp.row_names[i] for i in keep), lp.offset)
    return reduced, keep, m_orig

"""Branch and bound over LP relaxations, plus a dispatch to HiGHS.

Nodes are explored best-bound first.  Until the first incumbent exists the
search plunges depth-first into the child on the rounding side of the
branching variable, which finds feasible points quickly on big-M models.
Branching is on the most fractional integer column; ties are broken by a
permutation drawn from ``seed`` so runs are reproducible.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .instance import EQ, GE, LE, MilpInstance
from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, SolverError, simplex_solve

logger = logging.getLogger(__name__)

NO_FEASIBLE = "no feasible found"
TIME_LIMIT = "time_limit"
NODE_LIMIT = "node_limit"


@dataclass
class MipResult:
    status: str
    x: np.ndarray | None
    objective: float
    lower_bound: float
    nodes: int
    wall_time: float
    bound_history: list = field(default_factory=list)
    incumbent_history: list = field(default_factory=list)
    backend: str = "bnb"

    @property
    def gap(self) -> float:
        """``(objective - lower bound) / lower bound`` (absolute value in the denominator)."""
        return relative_gap(self.objective, self.lower_bound)

    @property
    def has_solution(self) -> bool:
        return self.x is not None


def relative_gap(objective: float, lower_bound: float) -> float:
    if not (math.isfinite(objective) and math.isfinite(lower_bound)):
        return math.inf
    diff = max(objective - lower_bound, 0.0)
    if diff <= 1e-12:
        return 0.0
    return diff / max(abs(lower_bound), 1e-9)


# LP relaxation back ends -----------------------------------------------------

def _relax_simplex(inst: MilpInstance):
    sol = simplex_solve(inst)
    return sol.status, sol.x, sol.objective


def _split_rows(inst: MilpInstance):
    A = inst.A.tocsr()
    le = inst.senses == LE
    ge = inst.senses == GE
    eq = inst.senses == EQ
    A_ub = None
    b_ub = None
    if le.any() or ge.any():
        from scipy import sparse
        A_ub = sparse.vstack([A[le], -A[ge]]).tocsr()
        b_ub = np.concatenate([inst.rhs[le], -inst.rhs[ge]])
    A_eq = A[eq] if eq.any() else None
    b_eq = inst.rhs[eq] if eq.any() else None
    return A_ub, b_ub, A_eq, b_eq


def _relax_highs(inst: MilpInstance):
    A_ub, b_ub, A_eq, b_eq = _split_rows(inst)
    bounds = np.column_stack([np.where(np.isinf(inst.lb), -np.inf, inst.lb),
                              np.where(np.isinf(inst.ub), np.inf, inst.ub)])
    res = optimize.linprog(inst.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                           bounds=bounds, method="highs-ds")
    if res.status == 0:
        return OPTIMAL, res.x, float(res.fun + inst.offset)
    if res.status == 2:
        return INFEASIBLE, None, math.nan
    if res.status == 3:
        return UNBOUNDED, None, math.nan
    raise SolverError(f"HiGHS LP failed: {res.message}")


_LP_BACKENDS: dict[str, Callable] = {"simplex": _relax_simplex, "highs": _relax_highs}


def _pick_lp(lp, inst: MilpInstance) -> Callable:
    if callable(lp):
        return lp
    if lp == "auto":
        # the dense in-repo simplex restarts from scratch at every node; keep it to small LPs
        return _relax_simplex if inst.num_rows * inst.num_vars <= 20_000 else _relax_highs
    return _LP_BACKENDS[lp]


# branch and bound -----------------------------------------------------------

def branch_and_bound(milp: MilpInstance, gap_target: float = 1e-6, time_limit: float | None = None,
                     *, lp="auto", seed: int = 0, node_limit: int | None = None,
                     int_tol: float = 1e-6, abs_gap: float = 1e-9, plunge: str = "always",
                     verbose: bool = False) -> MipResult:
    """Minimize ``milp`` to relative gap ``gap_target`` within ``time_limit`` seconds.

    ``plunge="always"`` dives into a child after every branching and falls
    back to the best open node when the dive is pruned; ``"first"`` dives
    only until the first incumbent exists.
    """
    if plunge not in ("always", "first"):
        raise ValueError("plunge must be 'always' or 'first'")
    if gap_target < 0:
        raise ValueError("gap_target must be >= 0")
    start = time.perf_counter()
    relax = _pick_lp(lp, milp)
    int_idx = np.flatnonzero(milp.integer_mask)
    order = np.random.default_rng(seed).permutation(int_idx.size)
    tiebreak = np.empty(int_idx.size)
    tiebreak[order] = np.arange(int_idx.size)

    lb0 = milp.lb.copy()
    ub0 = milp.ub.copy()
    lb0[int_idx] = np.ceil(lb0[int_idx] - int_tol)
    ub0[int_idx] = np.floor(ub0[int_idx] + int_tol)

    incumbent_x = None
    incumbent = math.inf
    counter = 0
    heap: list = []
    nodes = 0
    bound_history: list = []
    incumbent_history: list = []
    status = OPTIMAL

    def evaluate(lb, ub):
        if np.any(lb > ub + 1e-9):
            return INFEASIBLE, None, math.nan
        return relax(milp.with_bounds(lb, ub))

    def tol():
        return max(abs_gap, gap_target * abs(incumbent)) if math.isfinite(incumbent) else 0.0

    def global_bound():
        open_bound = heap[0][0] if heap else math.inf
        return min(open_bound, incumbent)

    root_status, root_x, root_obj = evaluate(lb0, ub0)
    nodes += 1
    if root_status == INFEASIBLE:
        return MipResult(INFEASIBLE, None, math.inf, math.inf, nodes, time.perf_counter() - start)
    if root_status == UNBOUNDED:
        return MipResult(UNBOUNDED, None, -math.inf, -math.inf, nodes, time.perf_counter() - start)
    dive = (root_obj, root_x, lb0, ub0, 0)
    last_bound = root_obj
    closing_bound = math.inf

    while True:
        if dive is not None:
            bound, x, lb, ub, depth = dive
            dive = None
        else:
            if not heap:
                break
            bound, _, depth, lb, ub, x = heapq.heappop(heap)
            if bound >= incumbent - tol():
                closing_bound = min(closing_bound, bound)
                heap.clear()
                break
        gb = min(bound, global_bound())
        if gb > last_bound:
            last_bound = gb
        bound_history.append(last_bound)
        if time_limit is not None and time.perf_counter() - start > time_limit:
            counter += 1
            heapq.heappush(heap, (bound, counter, depth, lb, ub, x))
            status = TIME_LIMIT
            break
        if node_limit is not None and nodes >= node_limit:
            counter += 1
            heapq.heappush(heap, (bound, counter, depth, lb, ub, x))
            status = NODE_LIMIT
            break
        if bound >= incumbent - tol():
            continue
        frac = np.abs(x[int_idx] - np.round(x[int_idx]))
        fractional = frac > int_tol
        if not fractional.any():
            incumbent_x = x.copy()
            incumbent_x[int_idx] = np.round(incumbent_x[int_idx])
            incumbent = milp.objective(incumbent_x)
            incumbent_history.append((nodes, incumbent))
            if verbose:
                logger.info("node %d: incumbent %.10g", nodes, incumbent)
            continue
        dist_half = np.where(fractional, -np.abs(x[int_idx] - np.floor(x[int_idx]) - 0.5), -np.inf)
        best = np.flatnonzero(dist_half == dist_half.max())
        pick = best[np.argmin(tiebreak[best])]
        j = int(int_idx[pick])
        value = x[j]
        down_ub = ub.copy()
        down_ub[j] = math.floor(value)
        up_lb = lb.copy()
        up_lb[j] = math.ceil(value)
        children = []
        for clb, cub, side in ((lb, down_ub, "down"), (up_lb, ub, "up")):
            st, cx, cobj = evaluate(clb, cub)
            nodes += 1
            if verbose:
                logger.debug("node %d depth %d branch x%d %s: %s %.6g", nodes, depth + 1, j, side, st, cobj)
            if st == OPTIMAL and cobj < incumbent - tol():
                children.append((max(cobj, bound), cx, clb, cub, side))
        if not children:
            continue
        if incumbent_x is None or plunge == "always":
            prefer = "up" if value - math.floor(value) >= 0.5 else "down"
            children.sort(key=lambda ch: (ch[4] != prefer, ch[0]))
            first = children.pop(0)
            dive = (first[0], first[1], first[2], first[3], depth + 1)
        for cb, cx, clb, cub, _ in children:
            counter += 1
            heapq.heappush(heap, (cb, counter, depth + 1, clb, cub, cx))

    wall = time.perf_counter() - start
    if status == OPTIMAL:
        # search closed: every open node was pruned against the incumbent
        lower = min(incumbent, max(last_bound, closing_bound if math.isfinite(closing_bound) else incumbent))
    else:
        lower = max(last_bound, global_bound()) if heap else last_bound
        lower = min(lower, incumbent)
    if incumbent_x is None:
        final = INFEASIBLE if status == OPTIMAL else NO_FEASIBLE
        return MipResult(final, None, math.inf, lower, nodes, wall, bound_history, incumbent_history)
    return MipResult(status, incumbent_x, incumbent, lower, nodes, wall, bound_history, incumbent_history)


# HiGHS MIP --------------------------------------------------------------------

def highs_milp(milp: MilpInstance, gap_target: float = 1e-6, time_limit: float | None = None) -> MipResult:
    """Solve with the HiGHS branch-and-cut shipped in SciPy.

    Presolve is off: on some planning models it returned a suboptimal point
    flagged optimal.
    """
    start = time.perf_counter()
    row_lo = np.where(milp.senses == LE, -np.inf, milp.rhs)
    row_hi = np.where(milp.senses == GE, np.inf, milp.rhs)
    constraints = [optimize.LinearConstraint(milp.A, row_lo, row_hi)] if milp.num_rows else []
    # HiGHS measures the gap against the incumbent, relative_gap against the bound
    options = {"disp": False, "mip_rel_gap": gap_target / (1.0 + gap_target), "presolve": False}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = optimize.milp(milp.c, constraints=constraints,
                        integrality=milp.integer_mask.astype(int),
                        bounds=optimize.Bounds(milp.lb, milp.ub), options=options)
    wall = time.perf_counter() - start
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    dual = getattr(res, "mip_dual_bound", None)
    if res.x is not None:
        obj = float(res.fun + milp.offset)
        lower = obj if dual is None or not np.isfinite(dual) else float(dual + milp.offset)
        lower = min(lower, obj)
        status = OPTIMAL if res.status == 0 else TIME_LIMIT
        x = np.asarray(res.x, dtype=float).copy()
        mask = milp.integer_mask
        x[mask] = np.round(x[mask])
        return MipResult(status, x, obj, lower, nodes, wall, backend="highs")
    if res.status == 2:
        return MipResult(INFEASIBLE, None, math.inf, math.inf, nodes, wall, backend="highs")
    if res.status == 3:
        return MipResult(UNBOUNDED, None, -math.inf, -math.inf, nodes, wall, backend="highs")
    lower = -math.inf if dual is None else float(dual + milp.offset)
    return MipResult(NO_FEASIBLE, None, math.inf, lower, nodes, wall, backend="highs")


def solve_milp(milp: MilpInstance, backend: str = "highs", gap_target: float = 1e-6,
               time_limit: float | None = None, **kwargs) -> MipResult:
    """Dispatch to :func:`branch_and_bound` (``"bnb"``) or :func:`highs_milp` (``"highs"``)."""
    if backend == "bnb":
        return branch_and_bound(milp, gap_target, time_limit, **kwargs)
    if backend == "highs":
        return highs_milp(milp, gap_target, time_limit)
    raise ValueError(f"unknown MILP backend {backend!r}")

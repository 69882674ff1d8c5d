"""Translate a :class:`~ctas.model.Problem` into a mixed-integer program.

Three risk treatments share one formulation:

``"none"``
    energy + time only (risk weight ignored);
``"extensive"``
    the sample-average CVaR of every cumulative requirement is written out
    with one tail-excess column per scenario;
``"master"``
    the same CVaR terms are represented by an epigraph column ``theta``
    per (task, capability) that L-shaped optimality cuts tighten.

Non-cumulative risk terms never depend on scenarios at solve time: the CVaR
of ``threshold - capability`` is precomputed per species and charged through
the presence indicator of that species at the task.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import cvar_precomputed_difference, derive_seed, expectation, sample
from .lp.instance import BINARY, CONTINUOUS, MilpInstance, ModelBuilder
from .model import END, START, And, Atom, ModelError, Or, Problem, RequirementExpr, iter_atoms

__all__ = [
    "ScenarioBlock",
    "Scenarios",
    "draw_scenarios",
    "noncumulative_risks",
    "big_m_values",
    "DecisionVars",
    "Formulation",
    "formulate",
    "build_extensive_form",
    "encode_requirement",
    "UnsupportedStructure",
    "MAX_OR_DEPTH",
]

MAX_OR_DEPTH = 4
SCREEN_TOL = 1e-9


class UnsupportedStructure(ModelError):
    """Requirement tree nests disjunctions deeper than the encoder allows."""


@dataclass(frozen=True)
class ScenarioBlock:
    """Coupled samples for one (task, capability): ``capability[k, xi]``, ``threshold[xi]``."""

    capability: np.ndarray
    threshold: np.ndarray

    @property
    def n(self) -> int:
        return self.threshold.size


@dataclass(frozen=True)
class Scenarios:
    species: tuple
    n: int
    seed: int
    blocks: dict

    def __getitem__(self, key) -> ScenarioBlock:
        return self.blocks[key]


def draw_scenarios(problem: Problem, n: int | None = None, seed: int | None = None) -> Scenarios:
    """Sample every cumulative requirement of every task.

    Scenario ``xi`` of a block couples the capability draws of all species with
    the threshold draw of the same index.  Seeds derive from
    ``(seed, "scenario", task, capability, species | "threshold")``.
    """
    n = problem.n_samples if n is None else int(n)
    seed = problem.seed if seed is None else int(seed)
    species = tuple(s.id for s in problem.species)
    blocks = {}
    for task in problem.tasks:
        for atom in iter_atoms(task.requirement):
            if not problem.capability_type(atom.capability).cumulative:
                continue
            cap = np.vstack([
                sample(sp.capability(atom.capability), n,
                       derive_seed(seed, "scenario", task.id, atom.capability, sp.id)).values
                for sp in problem.species
            ]) if species else np.zeros((0, n))
            thr = sample(atom.threshold, n, derive_seed(seed, "scenario", task.id, atom.capability, "threshold")).values
            blocks[(task.id, atom.capability)] = ScenarioBlock(cap, thr)
    return Scenarios(species=species, n=n, seed=seed, blocks=blocks)


def noncumulative_risks(problem: Problem, n: int | None = None, seed: int | None = None) -> dict:
    """CVaR of ``threshold - capability`` per (task, capability, species) for non-cumulative atoms."""
    n = problem.n_samples if n is None else int(n)
    seed = problem.seed if seed is None else int(seed)
    out = {}
    for task in problem.tasks:
        for atom in iter_atoms(task.requirement):
            if problem.capability_type(atom.capability).cumulative:
                continue
            for sp in problem.species:
                out[(task.id, atom.capability, sp.id)] = cvar_precomputed_difference(
                    sp.capability(atom.capability), atom.threshold, problem.beta, n,
                    derive_seed(seed, "noncumulative", task.id, atom.capability, sp.id))
    return out


def big_m_values(problem: Problem) -> tuple[float, float]:
    """``(C_large, B_large)``: bounds on any start time and any cumulative energy.

    Both sum, over every structural node pair, the largest time (energy) of
    any species on that pair; ``C_large`` also adds the largest service time
    of each task.  Adding one keeps relaxed rows strictly slack.
    """
    t_pair: dict = {}
    b_pair: dict = {}
    for (k, i, j), (energy, time) in problem.graph.edges.items():
        t_pair[(i, j)] = max(t_pair.get((i, j), 0.0), time)
        b_pair[(i, j)] = max(b_pair.get((i, j), 0.0), energy)
    service = sum(max((sp.service(t.id) for sp in problem.species), default=0.0) for t in problem.tasks)
    return sum(t_pair.values()) + service + 1.0, sum(b_pair.values()) + 1.0


@dataclass
class DecisionVars:
    """Column indices of every decision variable, keyed like the notation."""

    x: dict = field(default_factory=dict)        # (k, i, j)
    y: dict = field(default_factory=dict)        # (k, i)
    r_edge: dict = field(default_factory=dict)   # (k, i, j)
    r_task: dict = field(default_factory=dict)   # (k, i)
    q: dict = field(default_factory=dict)        # task id or (END, k)
    g: dict = field(default_factory=dict)        # (k, node)
    h: dict = field(default_factory=dict)        # task id
    h_atom: dict = field(default_factory=dict)   # (i, a)
    lam: dict = field(default_factory=dict)      # (i, a), cumulative only
    w: dict = field(default_factory=dict)        # (i, a) -> list of columns
    theta: dict = field(default_factory=dict)    # (i, a), master only
    z: list = field(default_factory=list)


@dataclass
class Formulation:
    problem: Problem
    builder: ModelBuilder
    vars: DecisionVars
    risk: str
    scenarios: Scenarios | None
    big_m: tuple
    _instance: MilpInstance | None = None

    @property
    def instance(self) -> MilpInstance:
        if self._instance is None or self._instance.num_rows != self.builder.num_rows:
            self._instance = self.builder.build()
        return self._instance

    def values(self, x) -> dict:
        """Split a solution vector into named groups."""
        v = self.vars
        x = np.asarray(x, dtype=float)
        return {
            "x": {key: float(x[j]) for key, j in v.x.items()},
            "y": {key: float(x[j]) for key, j in v.y.items()},
            "r_edge": {key: float(x[j]) for key, j in v.r_edge.items()},
            "r_task": {key: float(x[j]) for key, j in v.r_task.items()},
            "q": {key: float(x[j]) for key, j in v.q.items()},
            "g": {key: float(x[j]) for key, j in v.g.items()},
            "h": {key: float(x[j]) for key, j in v.h.items()},
            "h_atom": {key: float(x[j]) for key, j in v.h_atom.items()},
            "lam": {key: float(x[j]) for key, j in v.lam.items()},
            "theta": {key: float(x[j]) for key, j in v.theta.items()},
        }


def _node_name(node, k):
    if node == START:
        return f"s_{k}"
    if node == END:
        return f"u_{k}"
    return str(node)


def formulate(problem: Problem, scenarios: Scenarios | None = None, risk: str = "extensive",
              *, noncum: dict | None = None, max_or_depth: int = MAX_OR_DEPTH,
              strengthen: bool = True) -> Formulation:
    """Assemble the teaming program under risk treatment ``risk``.

    With ``strengthen`` the terminal time of each species is bounded below by
    the fleet-averaged route duration.  The row is implied by the scheduling
    chain for every integral point, so it only tightens the relaxation.
    """
    if risk not in ("none", "extensive", "master"):
        raise ValueError(f"unknown risk mode {risk!r}")
    if risk != "none" and scenarios is None:
        scenarios = draw_scenarios(problem)
    if scenarios is not None and risk != "none":
        missing = [(t.id, a.capability) for t in problem.tasks for a in iter_atoms(t.requirement)
                   if problem.capability_type(a.capability).cumulative
                   and (t.id, a.capability) not in scenarios.blocks]
        if missing:
            raise ModelError(f"scenarios do not cover cumulative requirements {missing}")
        if any(b.n != scenarios.n for b in scenarios.blocks.values()):
            raise ModelError("scenario blocks disagree on the sample count")
        if risk == "extensive" and scenarios.species != tuple(s.id for s in problem.species):
            raise ModelError("scenario species order does not match the problem")

    bld = ModelBuilder()
    v = DecisionVars()
    C_large, B_large = big_m_values(problem)
    tasks = [t.id for t in problem.tasks]

    for sp in problem.species:
        k, nk = sp.id, float(sp.count)
        for (i, j) in problem.graph.edges_of(k):
            energy = problem.graph.energy(k, i, j)
            tag = f"{k},{_node_name(i, k)},{_node_name(j, k)}"
            v.x[(k, i, j)] = bld.add_var(f"x[{tag}]", 0.0, nk, CONTINUOUS, problem.C_e * energy)
            v.r_edge[(k, i, j)] = bld.add_var(f"r[{tag}]", kind=BINARY)
        for i in tasks:
            v.y[(k, i)] = bld.add_var(f"y[{k},{i}]", 0.0, nk)
            v.r_task[(k, i)] = bld.add_var(f"rt[{k},{i}]", kind=BINARY)
    for i in tasks:
        v.q[i] = bld.add_var(f"q[{i}]", 0.0, C_large)
    for sp in problem.species:
        v.q[(END, sp.id)] = bld.add_var(f"q[u_{sp.id}]", 0.0, C_large, obj=problem.C_q)
    for sp in problem.species:
        cap = min(sp.energy_capacity, B_large)
        for node in tasks + [END]:
            v.g[(sp.id, node)] = bld.add_var(f"g[{sp.id},{_node_name(node, sp.id)}]", 0.0, cap)

    # indicator linking
    for sp in problem.species:
        k, nk = sp.id, float(sp.count)
        for key in [e for e in v.x if e[0] == k]:
            bld.add_row({v.x[key]: 1.0, v.r_edge[key]: -1.0}, ">=", 0.0, f"xr_lo[{key}]")
            bld.add_row({v.x[key]: 1.0, v.r_edge[key]: -nk}, "<=", 0.0, f"xr_hi[{key}]")
        for i in tasks:
            bld.add_row({v.y[(k, i)]: 1.0, v.r_task[(k, i)]: -1.0}, ">=", 0.0, f"yr_lo[{k},{i}]")
            bld.add_row({v.y[(k, i)]: 1.0, v.r_task[(k, i)]: -nk}, "<=", 0.0, f"yr_hi[{k},{i}]")

    # flow conservation, fleet limit, team size
    for sp in problem.species:
        k, nk = sp.id, float(sp.count)
        dispatched = {v.x[(k, START, i)]: 1.0 for i in tasks}
        if dispatched:
            bld.add_row(dispatched, "<=", nk, f"fleet[{k}]")
        for m in tasks:
            row = {}
            for (kk, i, j), col in v.x.items():
                if kk != k:
                    continue
                if j == m:
                    row[col] = row.get(col, 0.0) + 1.0
                if i == m:
                    row[col] = row.get(col, 0.0) - 1.0
            bld.add_row(row, "=", 0.0, f"flow[{k},{m}]")
            inflow = {v.x[(k, i, m)]: 1.0 for i in [START] + tasks if i != m}
            bld.add_row({**{c: -1.0 for c in inflow}, v.y[(k, m)]: 1.0}, "=", 0.0, f"team[{k},{m}]")
            bld.add_row({**{c: -1.0 for c in dispatched}, v.y[(k, m)]: 1.0}, "<=", 0.0, f"teamcap[{k},{m}]")

    # energy and time chains
    for sp in problem.species:
        k = sp.id
        for (i, j) in problem.graph.edges_of(k):
            energy, time = problem.graph.edges[(k, i, j)]
            r = v.r_edge[(k, i, j)]
            row = {r: B_large}
            if i != START:
                row[v.g[(k, i)]] = 1.0
            row[v.g[(k, j)]] = row.get(v.g[(k, j)], 0.0) - 1.0
            bld.add_row(row, "<=", B_large - energy, f"energy[{k},{i},{j}]")
            service = sp.service(i) if i != START else 0.0
            qj = v.q[j] if j != END else v.q[(END, k)]
            row = {r: C_large, qj: -1.0}
            if i != START:
                row[v.q[i]] = 1.0
            bld.add_row(row, "<=", C_large - time - service, f"time[{k},{i},{j}]")

    if strengthen:
        for sp in problem.species:
            k = sp.id
            if sp.count == 0 or not tasks:
                continue
            row = {v.q[(END, k)]: 1.0}
            for (i, j) in problem.graph.edges_of(k):
                service = sp.service(i) if i != START else 0.0
                dur = problem.graph.time(k, i, j) + service
                if dur:
                    row[v.x[(k, i, j)]] = -dur / sp.count
            bld.add_row(row, ">=", 0.0, f"duration[{k}]")
        _timing_bounds(problem, bld, v)

    # requirements at expected values
    for task in problem.tasks:
        encode_requirement(task.requirement, problem, bld, v, task.id, max_or_depth=max_or_depth)

    # risk terms
    if risk != "none" and problem.tasks:
        if noncum is None:
            noncum = noncumulative_risks(problem)
        coef = 1.0 / (scenarios.n * (1.0 - problem.beta)) if scenarios is not None else 0.0
        for task in problem.tasks:
            i = task.id
            v.h[i] = bld.add_var(f"h[{i}]", -math.inf, math.inf, obj=problem.C_h)
            total = {v.h[i]: 1.0}
            for atom in iter_atoms(task.requirement):
                a = atom.capability
                ha = bld.add_var(f"h[{i},{a}]", -math.inf, math.inf)
                v.h_atom[(i, a)] = ha
                total[ha] = -1.0
                if not problem.capability_type(a).cumulative:
                    for sp in problem.species:
                        eta = noncum[(i, a, sp.id)]
                        bld.add_row({ha: 1.0, v.r_task[(sp.id, i)]: -eta}, ">=", 0.0, f"risk_nc[{i},{a},{sp.id}]")
                    continue
                block = scenarios[(i, a)]
                lam = bld.add_var(f"lam[{i},{a}]", *_lambda_bounds(problem, block))
                v.lam[(i, a)] = lam
                if risk == "extensive":
                    cols = []
                    for xi in range(scenarios.n):
                        wcol = bld.add_var(f"w[{i},{a},{xi}]", 0.0, math.inf)
                        cols.append(wcol)
                        row = {wcol: 1.0, lam: 1.0}
                        for kk, sp in enumerate(problem.species):
                            c = float(block.capability[kk, xi])
                            if c != 0.0:
                                row[v.y[(sp.id, i)]] = c
                        bld.add_row(row, ">=", float(block.threshold[xi]), f"tail[{i},{a},{xi}]")
                    v.w[(i, a)] = cols
                    row = {ha: 1.0, lam: -1.0}
                    for wcol in cols:
                        row[wcol] = -coef
                    bld.add_row(row, "=", 0.0, f"cvar[{i},{a}]")
                else:
                    theta = bld.add_var(f"theta[{i},{a}]", 0.0, math.inf)
                    v.theta[(i, a)] = theta
                    bld.add_row({ha: 1.0, lam: -1.0, theta: -coef}, "=", 0.0, f"cvar[{i},{a}]")
            bld.add_row(total, "=", 0.0, f"risk[{i}]")

    return Formulation(problem=problem, builder=bld, vars=v, risk=risk,
                       scenarios=scenarios if risk != "none" else None, big_m=(C_large, B_large))


def _lambda_bounds(problem: Problem, block: ScenarioBlock) -> tuple[float, float]:
    """Range of the scenario losses ``gamma - c.y`` over the box ``0 <= y <= n``.

    The sample CVaR is minimized at one of the scenario losses, so clamping
    lambda to this range loses nothing and keeps an uncut master bounded.
    """
    counts = np.array([sp.count for sp in problem.species], dtype=float)
    cap = block.capability
    lo = block.threshold - np.maximum(cap, 0.0).T @ counts
    hi = block.threshold - np.minimum(cap, 0.0).T @ counts
    return float(lo.min()), float(hi.max())


def _forces_service(expr, problem: Problem) -> bool:
    """Whether every way of meeting ``expr`` needs at least one agent present."""
    if isinstance(expr, Atom):
        if not problem.capability_type(expr.capability).cumulative:
            return True
        return expectation(expr.threshold) > 0
    if isinstance(expr, And):
        return any(_forces_service(c, problem) for c in expr.children)
    return all(_forces_service(c, problem) for c in expr.children)


def _travel_times(problem: Problem, k: str) -> dict:
    """All-pairs shortest travel time of species ``k`` (service times ignored)."""
    nodes = [START] + [t.id for t in problem.tasks] + [END]
    index = {n: r for r, n in enumerate(nodes)}
    D = np.full((len(nodes), len(nodes)), np.inf)
    np.fill_diagonal(D, 0.0)
    for (i, j) in problem.graph.edges_of(k):
        D[index[i], index[j]] = problem.graph.time(k, i, j)
    for via in range(len(nodes)):
        D = np.minimum(D, D[:, via, None] + D[None, via, :])
    return {(a, b): float(D[index[a], index[b]]) for a in nodes for b in nodes}


def _timing_bounds(problem: Problem, bld: ModelBuilder, v: DecisionVars):
    """Coverage and travel-time rows implied by every integral point.

    A task that must be served is visited by some species; an agent of ``k``
    at task ``m`` cannot start it before its shortest travel time from the
    start, nor reach the terminal before it has also served ``m`` and
    travelled on.
    """
    for task in problem.tasks:
        if _forces_service(task.requirement, problem):
            bld.add_row({v.r_task[(sp.id, task.id)]: 1.0 for sp in problem.species if sp.count > 0},
                        ">=", 1.0, f"served[{task.id}]")
    for sp in problem.species:
        k = sp.id
        if sp.count == 0:
            continue
        d = _travel_times(problem, k)
        for task in problem.tasks:
            m = task.id
            rt = v.r_task[(k, m)]
            head = d[(START, m)]
            tail = sp.service(m) + d[(m, END)]
            if head > 0:
                bld.add_row({v.q[m]: 1.0, rt: -head}, ">=", 0.0, f"reach[{k},{m}]")
            if head + tail > 0:
                bld.add_row({v.q[(END, k)]: 1.0, rt: -(head + tail)}, ">=", 0.0, f"finish[{k},{m}]")


def build_extensive_form(problem: Problem, scenarios: Scenarios | None = None, **kwargs) -> Formulation:
    """Deterministic-equivalent MILP of the sample-average risk model.

    The returned :class:`Formulation` exposes the frozen program as
    ``.instance`` and the column map as ``.vars``.
    """
    if not 0.0 < problem.beta < 1.0:
        raise ModelError("beta must lie in (0, 1)")
    return formulate(problem, scenarios, "extensive", **kwargs)


def _or_depth(expr: RequirementExpr) -> int:
    if isinstance(expr, Atom):
        return 0
    inner = max((_or_depth(c) for c in expr.children), default=0)
    return inner + (1 if isinstance(expr, Or) else 0)


def encode_requirement(expr: RequirementExpr, problem: Problem, bld: ModelBuilder, v: DecisionVars,
                       task_id: str, *, max_or_depth: int = MAX_OR_DEPTH) -> list[int]:
    """Add linear rows forcing the expected-value requirement of ``task_id``.

    Cumulative atoms bound the expected team sum; non-cumulative atoms forbid
    species whose expected capability falls short and demand that at least
    one competent species is present.  Each child of an ``Or`` receives a
    binary selector and its rows are relaxed by a big-M when unselected.
    Returns the indices of the rows added.
    """
    if _or_depth(expr) > max_or_depth:
        raise UnsupportedStructure(f"task {task_id!r}: disjunctions nested deeper than {max_or_depth}")
    start_row = bld.num_rows
    _encode(expr, None, problem, bld, v, task_id)
    return list(range(start_row, bld.num_rows))


def _encode(expr, active, problem, bld, v, i):
    if isinstance(expr, And):
        for child in expr.children:
            _encode(child, active, problem, bld, v, i)
        return
    if isinstance(expr, Or):
        selectors = []
        for n, child in enumerate(expr.children):
            z = bld.add_var(f"z[{i},{len(v.z)}]", kind=BINARY)
            v.z.append(z)
            selectors.append(z)
            _encode(child, z, problem, bld, v, i)
        row = {z: 1.0 for z in selectors}
        if active is None:
            bld.add_row(row, ">=", 1.0, f"or[{i}]")
        else:
            row[active] = -1.0
            bld.add_row(row, ">=", 0.0, f"or[{i}]")
        return
    a = expr.capability
    gamma = expectation(expr.threshold)
    if problem.capability_type(a).cumulative:
        if gamma <= 0:
            return
        row = {v.y[(sp.id, i)]: expectation(sp.capability(a)) for sp in problem.species
               if expectation(sp.capability(a)) != 0.0}
        if active is None:
            bld.add_row(row, ">=", gamma, f"req[{i},{a}]")
        else:
            big_m = gamma + sum(expectation(sp.capability(a)) * sp.count for sp in problem.species)
            row[active] = -big_m
            bld.add_row(row, ">=", gamma - big_m, f"req[{i},{a}]")
        return
    competent = []
    for sp in problem.species:
        if expectation(sp.capability(a)) < gamma - SCREEN_TOL:
            rt = v.r_task[(sp.id, i)]
            if active is None:
                bld.add_row({rt: 1.0}, "<=", 0.0, f"forbid[{i},{a},{sp.id}]")
            else:
                bld.add_row({rt: 1.0, active: 1.0}, "<=", 1.0, f"forbid[{i},{a},{sp.id}]")
        else:
            competent.append(v.r_task[(sp.id, i)])
    row = {c: 1.0 for c in competent}
    if active is None:
        bld.add_row(row, ">=", 1.0, f"present[{i},{a}]")
    else:
        row[active] = -1.0
        bld.add_row(row, ">=", 0.0, f"present[{i},{a}]")


# root cutting planes ------------------------------------------------------------

def _strictly_monotone(problem: Problem, k: str) -> bool:
    """True when every edge of ``k`` raises energy or time, so used supports are acyclic."""
    sp = problem.species_by_id(k)
    for (i, j) in problem.graph.edges_of(k):
        energy, time = problem.graph.edges[(k, i, j)]
        service = sp.service(i) if i != START else 0.0
        if energy <= 0 and time + service <= 0:
            return False
    return True


def separate_connectivity(formulation: Formulation, x, tol: float = 1e-6) -> list:
    """Violated cut-set rows ``sum_{delta-(S)} x_k >= y_km`` for a relaxed point ``x``.

    Agents that serve task ``m`` travel from the start, so every node set
    ``S`` holding ``m`` but not the start is entered at least ``y_km`` times.
    Separation is a minimum start-to-``m`` cut in the support of ``x_k``.
    """
    import networkx as nx

    problem, v = formulation.problem, formulation.vars
    cuts = []
    for sp in problem.species:
        k = sp.id
        if not _strictly_monotone(problem, k):
            continue
        g = nx.DiGraph()
        for (kk, i, j), col in v.x.items():
            if kk == k and x[col] > 1e-9:
                g.add_edge(i, j, capacity=float(x[col]))
        for task in problem.tasks:
            m = task.id
            need = x[v.y[(k, m)]]
            if need <= tol or m not in g or START not in g:
                cut_value, side = 0.0, None
            else:
                cut_value, (reach, _) = nx.minimum_cut(g, START, m)
                side = reach
            if need <= tol or cut_value >= need - tol:
                continue
            reach = side if side is not None else {START}
            inside = [t.id for t in problem.tasks if t.id not in reach]
            row = {c: 1.0 for (kk, i, j), c in v.x.items()
                   if kk == k and j in inside and (i == START or i not in inside) and j != END}
            row[v.y[(k, m)]] = row.get(v.y[(k, m)], 0.0) - 1.0
            cuts.append((row, f"conn[{k},{m},{len(inside)}]"))
    return cuts


def add_root_cuts(formulation: Formulation, rounds: int = 30, tol: float = 1e-6) -> int:
    """Tighten the relaxation with connectivity cuts; returns the number added.

    The cuts hold for every integral point of the model, so the optimum is
    unchanged.  The relaxation is re-solved with HiGHS after each round.
    """
    from .lp.bnb import _relax_highs
    from .lp.simplex import OPTIMAL

    added = 0
    seen = set()
    for _ in range(rounds):
        status, x, _ = _relax_highs(formulation.instance.relaxation())
        if status != OPTIMAL:
            break
        new = 0
        for row, name in separate_connectivity(formulation, x, tol):
            key = tuple(sorted(row.items()))
            if key in seen:
                continue
            seen.add(key)
            formulation.builder.add_row(row, ">=", 0.0, f"{name}#{added + new}")
            new += 1
        if new == 0:
            break
        added += new
    return added

"""End-to-end planning: solve the teaming program, then turn flows into routes.

:func:`plan` runs one of three solve modes

* ``"deterministic"``: expected-value requirements only, no risk term;
* ``"extensive"``: the sampled risk model as one MILP;
* ``"lshaped"``: the same model by cut generation.

Each species' fractional flow is rounded up and covered by unit routes, and
the result is packed into a :class:`Plan`.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

from .flows import AgentRoute, FlowNetwork, cover_flow, is_route, round_flow, validate_flow
from .lp.bnb import NO_FEASIBLE, relative_gap, solve_milp
from .lp.simplex import INFEASIBLE, OPTIMAL, UNBOUNDED
from .lshaped import MasterInfeasible, run_lshaped
from .milp_builder import add_root_cuts, draw_scenarios, formulate
from .model import END, START, Problem

logger = logging.getLogger(__name__)

__all__ = ["MODES", "Plan", "PlanError", "plan", "decompose", "verify_plan", "schedule_violations",
           "plan_objective", "species_network", "status_is_failure"]

MODES = ("deterministic", "extensive", "lshaped")
SCHEDULE_TOL = 1e-6


class PlanError(RuntimeError):
    """Raised when an emitted plan fails its own consistency checks."""


@dataclass
class Plan:
    """A solved and decomposed teaming plan.

    ``schedule`` holds task start times and ``terminal_times`` the arrival of
    each species at its terminal.  ``objective`` is the solver value on the
    fractional flows; ``rounded_objective`` re-prices energy on the rounded
    flows with times and risks unchanged.
    """

    status: str
    mode: str
    seed: int
    objective: float = math.inf
    lower_bound: float = -math.inf
    gap: float = math.inf
    rounded_objective: float = math.inf
    wall_time: float = 0.0
    solve_time: float = 0.0
    round_time: float = 0.0
    cover_time: float = 0.0
    iterations: int = 0
    teams: dict = field(default_factory=dict)           # task -> {species: count}
    schedule: dict = field(default_factory=dict)        # task -> q
    terminal_times: dict = field(default_factory=dict)  # species -> q at terminal
    flows: dict = field(default_factory=dict)           # species -> FlowNetwork (fractional)
    rounded: dict = field(default_factory=dict)         # species -> FlowNetwork (integral)
    routes: list = field(default_factory=list)
    risk: dict = field(default_factory=dict)            # task -> h
    energy: float = 0.0
    rounded_energy: float = 0.0

    @property
    def has_solution(self) -> bool:
        return math.isfinite(self.objective)

    @property
    def rounded_gap(self) -> float:
        return relative_gap(self.rounded_objective, self.lower_bound)

    @property
    def gap_delta(self) -> float:
        """Increase of the optimality gap caused by rounding the flows."""
        if not self.has_solution:
            return math.inf
        return self.rounded_gap - self.gap

    def to_dict(self) -> dict:
        def num(v):
            return v if math.isfinite(v) else None

        return {
            "schema": 1,
            "solver": {"status": self.status, "mode": self.mode, "seed": self.seed,
                       "objective": num(self.objective), "lower_bound": num(self.lower_bound),
                       "gap": num(self.gap), "rounded_objective": num(self.rounded_objective),
                       "gap_delta": num(self.gap_delta), "wall_time": self.wall_time,
                       "solve_time": self.solve_time, "round_time": self.round_time,
                       "cover_time": self.cover_time, "iterations": self.iterations},
            "teams": self.teams,
            "schedule": self.schedule,
            "terminal_times": self.terminal_times,
            "energy": self.energy,
            "rounded_energy": self.rounded_energy,
            "risk": self.risk,
            "flows": [net.to_dict() for net in self.flows.values()],
            "rounded_flows": [net.to_dict() for net in self.rounded.values()],
            "routes": [r.to_dict() for r in self.routes],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Plan":
        s = doc["solver"]

        def num(v, default):
            return default if v is None else float(v)

        flows = [FlowNetwork.from_dict(d) for d in doc.get("flows", [])]
        rounded = [FlowNetwork.from_dict(d) for d in doc.get("rounded_flows", [])]
        routes = [AgentRoute(r["species"], int(r["individual"]), tuple(r["nodes"]), float(r["energy"]))
                  for r in doc.get("routes", [])]
        return cls(
            status=s["status"], mode=s["mode"], seed=int(s["seed"]),
            objective=num(s.get("objective"), math.inf), lower_bound=num(s.get("lower_bound"), -math.inf),
            gap=num(s.get("gap"), math.inf), rounded_objective=num(s.get("rounded_objective"), math.inf),
            wall_time=float(s.get("wall_time", 0.0)), solve_time=float(s.get("solve_time", 0.0)),
            round_time=float(s.get("round_time", 0.0)), cover_time=float(s.get("cover_time", 0.0)),
            iterations=int(s.get("iterations", 0)),
            teams=doc.get("teams", {}), schedule=doc.get("schedule", {}),
            terminal_times=doc.get("terminal_times", {}), flows={n.species: n for n in flows},
            rounded={n.species: n for n in rounded}, routes=routes, risk=doc.get("risk", {}),
            energy=float(doc.get("energy", 0.0)), rounded_energy=float(doc.get("rounded_energy", 0.0)),
        )


def species_network(problem: Problem, k: str, x: dict) -> FlowNetwork:
    """Species ``k``'s slice of a solved flow ``x[(k, i, j)]``."""
    flows, costs = {}, {}
    for (i, j) in problem.graph.edges_of(k):
        f = x.get((k, i, j), 0.0)
        flows[(i, j)] = f if abs(f) > 1e-9 else 0.0
        costs[(i, j)] = problem.graph.energy(k, i, j)
    return FlowNetwork(flows, costs, START, END, k)


def plan_objective(problem: Problem, energy: float, terminal_times: dict, risk: dict) -> float:
    return (problem.C_e * energy + problem.C_q * sum(terminal_times.values())
            + problem.C_h * sum(risk.values()))


def schedule_violations(problem: Problem, schedule: dict, terminal_times: dict, routes) -> list:
    """Route edges ``i -> j`` where ``q_j - q_i`` is shorter than travel plus service."""
    bad = []
    for r in routes:
        sp = problem.species_by_id(r.species)
        for i, j in r.edges:
            if (r.species, i, j) not in problem.graph.edges:
                continue  # not a graph edge; reported by the route check
            qi = 0.0 if i == START else schedule[i]
            qj = terminal_times[r.species] if j == END else schedule[j]
            need = problem.graph.time(r.species, i, j) + (0.0 if i == START else sp.service(i))
            if qj - qi < need - SCHEDULE_TOL:
                bad.append((r.species, r.individual, i, j, qj - qi, need))
    return bad


def decompose(net: FlowNetwork, *, capacity: float | None = None, time_limit: float | None = 60.0):
    """Round ``net`` and cover it with routes; returns ``(rounded, cover, round_time)``."""
    t0 = time.perf_counter()
    rounded = round_flow(net)
    round_time = time.perf_counter() - t0
    cover = cover_flow(rounded, time_limit=time_limit, capacity=capacity)
    return rounded, cover, round_time


def _solve(problem: Problem, mode: str, gap: float, time_limit, backend: str, root_cuts: int):
    """Returns ``(status, values, objective, lower_bound, iterations)``."""
    if mode == "lshaped":
        try:
            res = run_lshaped(problem, draw_scenarios(problem), gap=gap, time_limit=time_limit,
                              backend=backend, root_cuts=root_cuts)
        except MasterInfeasible:
            return INFEASIBLE, None, math.inf, math.inf, 0
        if res.x is None:
            return res.status, None, math.inf, res.lower_bound, res.iterations
        return res.status, res.values, res.objective, res.lower_bound, res.iterations
    risk = "none" if mode == "deterministic" else "extensive"
    formulation = formulate(problem, risk=risk)
    if root_cuts:
        add_root_cuts(formulation, rounds=root_cuts)
    res = solve_milp(formulation.instance, backend=backend, gap_target=gap, time_limit=time_limit)
    if not res.has_solution:
        return res.status, None, math.inf, res.lower_bound, 0
    return res.status, formulation.values(res.x), res.objective, res.lower_bound, 0


def plan(problem: Problem, mode: str = "extensive", *, gap: float = 1e-4, time_limit: float | None = 120.0,
         backend: str = "highs", root_cuts: int = 30, cover_time_limit: float | None = 60.0,
         check: bool = True) -> Plan:
    """Solve ``problem`` in ``mode`` and decompose every species' flow into routes.

    ``time_limit`` bounds the teaming solve only; covers have their own limit.
    When the solve ends without an incumbent the returned plan carries the
    solver status and no routes.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    start = time.perf_counter()
    if mode == "deterministic":
        problem = problem.replace(C_h=0.0)
    status, values, objective, lower, iterations = _solve(problem, mode, gap, time_limit, backend, root_cuts)
    solve_time = time.perf_counter() - start
    out = Plan(status=status, mode=mode, seed=problem.seed, lower_bound=lower,
               solve_time=solve_time, iterations=iterations)
    if values is None:
        out.wall_time = time.perf_counter() - start
        return out
    if not problem.tasks:
        status = OPTIMAL
    out.status, out.objective = status, objective
    out.gap = relative_gap(objective, lower)
    out.schedule = {t.id: values["q"][t.id] for t in problem.tasks}
    out.terminal_times = {s.id: values["q"][(END, s.id)] for s in problem.species}
    out.risk = {t: h for t, h in values["h"].items()}

    for sp in problem.species:
        net = species_network(problem, sp.id, values["x"])
        out.flows[sp.id] = net
        cap = None if math.isinf(sp.energy_capacity) else sp.energy_capacity
        rounded, cover, round_time = decompose(net, capacity=cap, time_limit=cover_time_limit)
        out.round_time += round_time
        out.cover_time += cover.wall_time
        out.rounded[sp.id] = rounded
        out.routes.extend(cover.routes)

    out.energy = sum(n.energy() for n in out.flows.values())
    out.rounded_energy = sum(n.energy() for n in out.rounded.values())
    out.rounded_objective = plan_objective(problem, out.rounded_energy, out.terminal_times, out.risk)
    for t in problem.tasks:
        team = {}
        for k, net in out.rounded.items():
            n = sum(f for (i, j), f in net.flows.items() if j == t.id)
            if n > 0:
                team[k] = int(round(n))
        out.teams[t.id] = team
    out.wall_time = time.perf_counter() - start
    if check:
        problems = verify_plan(problem, out)
        if problems:
            raise PlanError("; ".join(problems))
    return out


def verify_plan(problem: Problem, p: Plan) -> list:
    """Re-validate flows, routes and the schedule; returns a list of messages."""
    msgs = []
    for k, net in p.rounded.items():
        report = validate_flow(net)
        if not report.ok:
            msgs.append(f"species {k}: rounded flow invalid: {report.violations}")
        summed: dict = {}
        for r in (r for r in p.routes if r.species == k):
            if not is_route(r.nodes, net):
                msgs.append(f"species {k}: route {r.individual} is not a source-to-sink path")
            for e in r.edges:
                summed[e] = summed.get(e, 0) + 1
        for e, f in net.flows.items():
            if summed.get(e, 0) != int(round(f)):
                msgs.append(f"species {k}: routes carry {summed.get(e, 0)} on {e}, flow is {f}")
    for v in schedule_violations(problem, p.schedule, p.terminal_times, p.routes):
        msgs.append("schedule too tight: species {} agent {} on {}->{} has {:.6g} < {:.6g}".format(*v))
    return msgs


def status_is_failure(status: str) -> bool:
    return status in (INFEASIBLE, UNBOUNDED, NO_FEASIBLE)

"""Species flows: validation, integral round-up and per-agent route covers.

A :class:`FlowNetwork` is one species' slice of the routing graph: a source,
a sink and directed edges carrying a (possibly fractional) number of agents
and an energy cost.  Turning a solved flow into routes is done in two steps:

1. :func:`round_flow` lifts every positive edge to at least its ceiling and
   restores conservation at minimum energy.  The constraint matrix is a node
   arc incidence matrix, so the simplex vertex it returns is integral.
2. :func:`cover_flow` splits the integral flow into unit source-to-sink paths
   so that the most expensive single route is as cheap as possible.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import re
import time
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .lp.bnb import TIME_LIMIT, MipResult, branch_and_bound
from .lp.instance import BINARY, CONTINUOUS, INTEGER, ModelBuilder
from .lp.simplex import INFEASIBLE, OPTIMAL, simplex_solve
from .model import END, START

logger = logging.getLogger(__name__)

__all__ = [
    "FlowNetwork",
    "AgentRoute",
    "FlowReport",
    "CoverResult",
    "NonIntegralVertex",
    "FlowError",
    "snap_ceil",
    "round_flow",
    "cover_flow",
    "cover_flow_individual",
    "validate_flow",
    "is_route",
    "check_total_unimodularity",
    "is_totally_unimodular",
    "incidence_matrix",
    "to_dot",
    "from_dot",
    "routes_to_json",
    "routes_from_json",
]

FLOW_TOL = 1e-6
ZERO_TOL = 1e-9


class FlowError(ValueError):
    pass


class NonIntegralVertex(FlowError):
    """The round-up LP returned a fractional vertex (would contradict unimodularity)."""


@dataclass
class FlowNetwork:
    """Directed network with edge flows and energy costs.

    ``flows`` and ``costs`` are keyed by ``(tail, head)``.  Edges with zero
    flow may be present; they stay at zero when rounding.
    """

    flows: dict
    costs: dict
    source: str = START
    sink: str = END
    species: str = ""

    def __post_init__(self):
        self.flows = {tuple(e): float(f) for e, f in self.flows.items()}
        self.costs = {tuple(e): float(b) for e, b in self.costs.items()}
        for e in self.flows:
            self.costs.setdefault(e, 0.0)
        for e in self.costs:
            self.flows.setdefault(e, 0.0)

    @property
    def edges(self) -> list:
        return list(self.flows)

    @property
    def nodes(self) -> list:
        seen = {self.source: None}
        for u, v in self.flows:
            seen.setdefault(u, None)
            seen.setdefault(v, None)
        seen.setdefault(self.sink, None)
        return list(seen)

    @property
    def intermediate(self) -> list:
        return [n for n in self.nodes if n not in (self.source, self.sink)]

    def positive_edges(self, tol: float = ZERO_TOL) -> list:
        return [e for e, f in self.flows.items() if f > tol]

    def total_flow(self) -> float:
        return sum(f for (u, _), f in self.flows.items() if u == self.source)

    def energy(self) -> float:
        return sum(f * self.costs[e] for e, f in self.flows.items())

    def with_flows(self, flows: dict) -> "FlowNetwork":
        return FlowNetwork(dict(flows), dict(self.costs), self.source, self.sink, self.species)

    def support_graph(self, tol: float = ZERO_TOL) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        for e in self.positive_edges(tol):
            g.add_edge(*e, flow=self.flows[e], cost=self.costs[e])
        return g

    def to_dict(self) -> dict:
        return {
            "species": self.species,
            "source": self.source,
            "sink": self.sink,
            "edges": [{"from": u, "to": v, "flow": self.flows[(u, v)], "energy": self.costs[(u, v)]}
                      for (u, v) in self.flows],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FlowNetwork":
        flows = {(e["from"], e["to"]): float(e["flow"]) for e in doc["edges"]}
        costs = {(e["from"], e["to"]): float(e.get("energy", 0.0)) for e in doc["edges"]}
        return cls(flows, costs, doc.get("source", START), doc.get("sink", END), doc.get("species", ""))


@dataclass(frozen=True)
class AgentRoute:
    species: str
    individual: int
    nodes: tuple
    energy: float

    @property
    def edges(self) -> list:
        return list(zip(self.nodes[:-1], self.nodes[1:]))

    def to_dict(self) -> dict:
        return {"species": self.species, "individual": self.individual,
                "nodes": list(self.nodes), "energy": self.energy}


# validation ------------------------------------------------------------------

@dataclass
class FlowReport:
    residuals: dict = field(default_factory=dict)   # node -> inflow - outflow
    negative: list = field(default_factory=list)
    cycles: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.residuals or self.negative)

    @property
    def violations(self) -> list:
        out = [("residual", n, r) for n, r in self.residuals.items()]
        out += [("negative", e, f) for e, f in self.negative]
        return out


def validate_flow(net: FlowNetwork, tol: float = FLOW_TOL, max_cycles: int = 100) -> FlowReport:
    """Conservation residuals, negative edges and positive-flow cycles."""
    balance = dict.fromkeys(net.intermediate, 0.0)
    for (u, v), f in net.flows.items():
        if v in balance:
            balance[v] += f
        if u in balance:
            balance[u] -= f
    report = FlowReport()
    report.residuals = {n: r for n, r in balance.items() if abs(r) > tol}
    report.negative = [(e, f) for e, f in net.flows.items() if f < -tol]
    for cyc in itertools.islice(nx.simple_cycles(net.support_graph(tol)), max_cycles):
        report.cycles.append(list(cyc))
    return report


def is_route(nodes, net: FlowNetwork) -> bool:
    """A source-to-sink walk on network edges that never revisits a node."""
    nodes = list(nodes)
    if len(nodes) < 2 or nodes[0] != net.source or nodes[-1] != net.sink:
        return False
    if len(set(nodes)) != len(nodes):
        return False
    return all((u, v) in net.flows for u, v in zip(nodes[:-1], nodes[1:]))


# round-up ------------------------------------------------------------------

def snap_ceil(value: float, tol: float = FLOW_TOL) -> int:
    """Ceiling that treats values within ``tol`` of an integer as that integer."""
    near = round(value)
    if abs(value - near) <= tol:
        return int(near)
    return int(math.ceil(value))


def _round_lp(net: FlowNetwork, edges: list):
    bld = ModelBuilder()
    cols = {}
    for e in edges:
        cols[e] = bld.add_var(f"x[{e[0]},{e[1]}]", float(snap_ceil(net.flows[e])), math.inf,
                              CONTINUOUS, net.costs[e])
    for n in net.intermediate:
        row = {}
        for (u, v), j in cols.items():
            if v == n:
                row[j] = row.get(j, 0.0) + 1.0
            if u == n:
                row[j] = row.get(j, 0.0) - 1.0
        if row:
            bld.add_row(row, "=", 0.0, f"bal[{n}]")
    return bld.build(), cols


def round_flow(net: FlowNetwork, tol: float = FLOW_TOL) -> FlowNetwork:
    """Cheapest conserved integral flow that dominates the ceiling of ``net``.

    Edges with zero flow stay at zero.  The LP is solved with the in-repo
    simplex; its vertex is checked for integrality and snapped exactly.
    """
    report = validate_flow(net, tol=tol, max_cycles=0)
    if report.residuals:
        raise FlowError(f"input flow is not conserved: {report.residuals}")
    if report.negative:
        raise FlowError(f"negative flows: {report.negative}")
    edges = net.positive_edges()
    if not edges:
        return net.with_flows({e: 0.0 for e in net.flows})
    lp, cols = _round_lp(net, edges)
    sol = simplex_solve(lp)
    if sol.status != OPTIMAL:
        raise FlowError(f"round-up LP is {sol.status}")
    flows = {e: 0.0 for e in net.flows}
    for e, j in cols.items():
        v = sol.x[j]
        if abs(v - round(v)) > tol:
            raise NonIntegralVertex(f"edge {e} took fractional value {v!r}")
        flows[e] = float(round(v))
    return net.with_flows(flows)


# cover ---------------------------------------------------------------------

@dataclass
class CoverResult:
    routes: list
    max_energy: float
    lower_bound: float
    status: str
    wall_time: float
    paths: int = 0

    @property
    def gap(self) -> float:
        from .lp.bnb import relative_gap
        return relative_gap(self.max_energy, self.lower_bound)


def _integral_flows(net: FlowNetwork) -> dict:
    out = {}
    for e, f in net.flows.items():
        if abs(f - round(f)) > FLOW_TOL or f < -FLOW_TOL:
            raise FlowError(f"cover needs a non-negative integral flow; edge {e} carries {f}")
        if round(f) > 0:
            out[e] = int(round(f))
    return out


def _enumerate_paths(net: FlowNetwork, flows: dict, max_paths: int) -> list:
    g = nx.DiGraph()
    g.add_nodes_from([net.source, net.sink])
    g.add_edges_from(flows)
    if not nx.is_directed_acyclic_graph(g):
        raise FlowError("flow support contains a cycle; route cover needs an acyclic support")
    paths = []
    for p in nx.all_simple_paths(g, net.source, net.sink):
        paths.append(tuple(p))
        if len(paths) > max_paths:
            raise FlowError(f"more than {max_paths} source-to-sink paths in the flow support")
    return sorted(paths)


def _cover_with(paths: list, flows: dict, time_limit: float | None):
    """Integer path multiplicities reproducing ``flows``; ``(status, counts)``."""
    bld = ModelBuilder()
    cols = []
    for k, p in enumerate(paths):
        cap = min(flows[e] for e in zip(p[:-1], p[1:]))
        cols.append(bld.add_var(f"n[{k}]", 0.0, float(cap), INTEGER))
    for e, f in flows.items():
        row = {cols[k]: 1.0 for k, p in enumerate(paths) if e in set(zip(p[:-1], p[1:]))}
        if not row:
            return INFEASIBLE, None
        bld.add_row(row, "=", float(f), f"cover[{e[0]},{e[1]}]")
    res: MipResult = branch_and_bound(bld.build(), time_limit=time_limit, lp="simplex")
    if not res.has_solution:
        return res.status, None
    return OPTIMAL, [int(round(res.x[c])) for c in cols]


def cover_flow(net: FlowNetwork, time_limit: float | None = 60.0, *,
               max_paths: int = 20_000, capacity: float | None = None) -> CoverResult:
    """Split an integral flow into unit routes minimizing the largest route energy.

    Agents of one species are interchangeable, so routes are aggregated into
    path multiplicities.  Whether the flow can be covered using only paths of
    energy at most ``T`` is monotone in ``T``, so the optimum is found by
    bisection over the distinct path energies, each step an integer
    feasibility program.  The search starts at the largest cheapest-path
    energy through any used edge.  Routes exceeding ``capacity`` are
    reported with a warning.
    """
    start = time.perf_counter()
    flows = _integral_flows(net)
    if not flows:
        return CoverResult([], 0.0, 0.0, OPTIMAL, time.perf_counter() - start)
    paths = _enumerate_paths(net, flows, max_paths)
    cost = {p: sum(net.costs[e] for e in zip(p[:-1], p[1:])) for p in paths}
    floor = max(min(cost[p] for p in paths if e in set(zip(p[:-1], p[1:]))) for e in flows)
    levels = sorted({c for c in cost.values() if c >= floor - FLOW_TOL})

    def remaining():
        return None if time_limit is None else max(time_limit - (time.perf_counter() - start), 1e-3)

    # the top level allows every path, and any integral acyclic flow decomposes
    lo, hi = 0, len(levels) - 1
    allowed = paths
    status, best = _cover_with(allowed, flows, remaining())
    if best is None:
        raise FlowError(f"route cover failed: {status}")
    best_paths, lower, status = allowed, levels[0], OPTIMAL
    while lo < hi:
        if time_limit is not None and time.perf_counter() - start >= time_limit:
            status = TIME_LIMIT
            break
        mid = (lo + hi) // 2
        allowed = [p for p in paths if cost[p] <= levels[mid] + FLOW_TOL]
        found, counts = _cover_with(allowed, flows, remaining())
        if counts is not None:
            best, best_paths, hi = counts, allowed, mid
        elif found == INFEASIBLE:
            lo = mid + 1
            lower = levels[lo]
        else:
            status = TIME_LIMIT
            break
    routes = []
    for p, n in zip(best_paths, best):
        for _ in range(n):
            routes.append(AgentRoute(net.species, len(routes), p, cost[p]))
    worst = max(r.energy for r in routes)
    if capacity is not None:
        for r in routes:
            if r.energy > capacity + FLOW_TOL:
                logger.warning("route of %s agent %d uses %.6g energy above capacity %.6g",
                               r.species, r.individual, r.energy, capacity)
    return CoverResult(routes, worst, worst if status == OPTIMAL else min(lower, worst), status,
                       time.perf_counter() - start, len(paths))


def cover_flow_individual(net: FlowNetwork, time_limit: float | None = 60.0, *,
                          gap: float = 1e-9) -> CoverResult:
    """Per-individual cover: one binary unit flow per agent.

    Agents are ordered by non-increasing route energy to break symmetry, and
    an agent may only use edges leaving nodes it actually reaches.  Meant for
    cross-checking :func:`cover_flow` on small networks.
    """
    start = time.perf_counter()
    flows = _integral_flows(net)
    if not flows:
        return CoverResult([], 0.0, 0.0, OPTIMAL, time.perf_counter() - start)
    n_agents = sum(f for (u, _), f in flows.items() if u == net.source)
    edges = list(flows)
    bld = ModelBuilder()
    T = bld.add_var("T", 0.0, math.inf, CONTINUOUS, 1.0)
    x = {(l, e): bld.add_var(f"x[{l},{e[0]},{e[1]}]", kind=BINARY)
         for l in range(n_agents) for e in edges}
    for e in edges:
        bld.add_row({x[(l, e)]: 1.0 for l in range(n_agents)}, "=", float(flows[e]), f"sum[{e}]")
    inner = {n for e in edges for n in e} - {net.source, net.sink}
    for l in range(n_agents):
        bld.add_row({x[(l, e)]: 1.0 for e in edges if e[0] == net.source}, "=", 1.0, f"dispatch[{l}]")
        for n in inner:
            row = {}
            for e in edges:
                if e[1] == n:
                    row[x[(l, e)]] = row.get(x[(l, e)], 0.0) + 1.0
                if e[0] == n:
                    row[x[(l, e)]] = row.get(x[(l, e)], 0.0) - 1.0
            bld.add_row(row, "=", 0.0, f"cons[{l},{n}]")
            # out-edges of a node are usable only if the agent enters it
            incoming = {x[(l, e)]: -1.0 for e in edges if e[1] == n}
            for e in edges:
                if e[0] == n:
                    bld.add_row({x[(l, e)]: 1.0, **incoming}, "<=", 0.0, f"reach[{l},{e}]")
        energy = {x[(l, e)]: net.costs[e] for e in edges}
        bld.add_row({T: 1.0, **{j: -c for j, c in energy.items()}}, ">=", 0.0, f"bound[{l}]")
        if l + 1 < n_agents:
            row = dict(energy)
            for e in edges:
                row[x[(l + 1, e)]] = row.get(x[(l + 1, e)], 0.0) - net.costs[e]
            bld.add_row(row, ">=", 0.0, f"order[{l}]")
    res = branch_and_bound(bld.build(), gap_target=gap, time_limit=time_limit, lp="simplex")
    if not res.has_solution:
        raise FlowError(f"route cover failed: {res.status}")
    routes = []
    for l in range(n_agents):
        used = {e[0]: e[1] for e in edges if res.x[x[(l, e)]] > 0.5}
        nodes = [net.source]
        while nodes[-1] != net.sink:
            nodes.append(used[nodes[-1]])
        energy = sum(net.costs[e] for e in zip(nodes[:-1], nodes[1:]))
        routes.append(AgentRoute(net.species, l, tuple(nodes), energy))
    worst = max(r.energy for r in routes)
    return CoverResult(routes, worst, min(res.lower_bound, worst), res.status, time.perf_counter() - start)


# unimodularity --------------------------------------------------------------

def incidence_matrix(net: FlowNetwork, tol: float = ZERO_TOL) -> np.ndarray:
    """Conservation rows (intermediate nodes) over positive edges."""
    edges = net.positive_edges(tol)
    nodes = net.intermediate
    A = np.zeros((len(nodes), len(edges)))
    index = {n: r for r, n in enumerate(nodes)}
    for c, (u, v) in enumerate(edges):
        if v in index:
            A[index[v], c] += 1.0
        if u in index:
            A[index[u], c] -= 1.0
    return A


def is_totally_unimodular(A, max_dim: int = 8) -> bool:
    """Exhaustively test every square submatrix up to ``max_dim``."""
    if max_dim > 8:
        raise ValueError("exhaustive minor check is limited to max_dim <= 8")
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return True
    if not np.all(np.isin(A, (-1.0, 0.0, 1.0))):
        return False
    m, n = A.shape
    for k in range(2, min(max_dim, m, n) + 1):
        for rows in itertools.combinations(range(m), k):
            sub = A[rows, :]
            for cols in itertools.combinations(range(n), k):
                d = round(np.linalg.det(sub[:, cols]))
                if d not in (-1, 0, 1):
                    return False
    return True


def check_total_unimodularity(net: FlowNetwork, max_dim: int = 8) -> bool:
    return is_totally_unimodular(incidence_matrix(net), max_dim)


# export ----------------------------------------------------------------------

def _dot_id(node) -> str:
    return '"' + str(node).replace('"', '\\"') + '"'


def to_dot(net: FlowNetwork, routes=None, name: str = "flow") -> str:
    """Graphviz text with ``flow/energy`` edge labels; routes become extra clusters."""
    lines = [f"digraph {_dot_id(name)} {{", "  rankdir=LR;"]
    for (u, v), f in net.flows.items():
        if f > ZERO_TOL:
            lines.append(f"  {_dot_id(u)} -> {_dot_id(v)} [label=\"{f:.10g}/{net.costs[(u, v)]:.10g}\"];")
    for r in routes or ():
        tag = f"{r.species}#{r.individual}"
        lines.append(f"  subgraph {_dot_id('cluster_' + tag)} {{ label={_dot_id(tag + f' e={r.energy:g}')};")
        for u, v in r.edges:
            lines.append(f"    {_dot_id(tag + ':' + str(u))} -> {_dot_id(tag + ':' + str(v))};")
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


_DOT_EDGE = re.compile(r'^\s*"((?:[^"\\]|\\.)*)"\s*->\s*"((?:[^"\\]|\\.)*)"\s*'
                       r'\[label="([^"/]+)/([^"]+)"\];\s*$')


_DOT_GRAPH = re.compile(r'^\s*digraph\s+"((?:[^"\\]|\\.)*)"\s*\{')


def from_dot(text: str) -> list:
    """Parse :func:`to_dot` output back into one network per ``digraph``.

    Route clusters are skipped and graphs without flow edges are dropped;
    each graph's name becomes the network's species.
    """
    nets = []
    flows = costs = None
    name = ""
    depth = 0
    for line in text.splitlines():
        head = _DOT_GRAPH.match(line)
        if head:
            if flows:
                nets.append(FlowNetwork(flows, costs, START, END, name))
            flows, costs, name, depth = {}, {}, head.group(1), 0
            continue
        if "subgraph" in line:
            depth += 1
        elif depth and line.strip() == "}":
            depth -= 1
        elif depth == 0 and flows is not None:
            m = _DOT_EDGE.match(line)
            if m:
                u, v = (g.replace('\\"', '"') for g in m.group(1, 2))
                flows[(u, v)] = float(m.group(3))
                costs[(u, v)] = float(m.group(4))
    if flows:
        nets.append(FlowNetwork(flows, costs, START, END, name))
    if not nets:
        raise FlowError("no flow edges found in DOT text")
    return nets


def routes_to_json(routes) -> str:
    return json.dumps([r.to_dict() for r in routes], indent=2)


def routes_from_json(text: str) -> list:
    return [AgentRoute(d["species"], int(d["individual"]), tuple(d["nodes"]), float(d["energy"]))
            for d in json.loads(text)]

"""Instance generators and success-probability scoring.

Three families live here:

* :func:`random_flow_network` builds conserved fractional flows on random
  DAGs for exercising the decomposition code;
* :func:`pandemic_case` assembles the seven-species, eight-task-type service
  scenario at any size of the benchmark grid;
* :func:`random_teaming_problem` draws small feasible teaming instances for
  solver cross-checks.

:func:`success_probability` scores a plan by the chance that every task's
requirement holds when capabilities and thresholds are realized.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .distributions import (
    Gaussian,
    PointMass,
    derive_seed,
    expectation,
    sample,
    std,
)
from .flows import FlowNetwork
from .model import (
    END,
    START,
    And,
    Atom,
    CapabilityType,
    ModelError,
    Or,
    Problem,
    Species,
    Task,
    build_graph,
    iter_atoms,
)

__all__ = [
    "BenchCase",
    "MissingCostMatrix",
    "PANDEMIC_CAPABILITIES",
    "PANDEMIC_SPECIES",
    "PANDEMIC_TASK_TYPES",
    "pandemic_case",
    "bench_grid",
    "load_bench_cases",
    "dump_bench_cases",
    "synthetic_cost_matrix",
    "read_cost_csv",
    "write_cost_csv",
    "random_flow_network",
    "random_teaming_problem",
    "SuccessReport",
    "success_probability",
    "requirement_probability",
]


class MissingCostMatrix(ModelError):
    """No usable energy/time matrix was supplied for a generated case."""


@dataclass(frozen=True)
class BenchCase:
    case_id: str
    tasks: int
    agents: int
    gamma: float = 1.0
    seed: int = 0
    n_species: int = 7

    def __post_init__(self):
        if self.tasks < 1 or self.agents < 1 or self.n_species < 1:
            raise ValueError("task and agent counts must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def species_counts(self) -> list[int]:
        """Agents spread as evenly as possible, earlier species taking the remainder."""
        base, extra = divmod(self.agents, self.n_species)
        return [base + (1 if k < extra else 0) for k in range(self.n_species)]


# pandemic service case ---------------------------------------------------------

PANDEMIC_CAPABILITIES = (
    CapabilityType("a1", cumulative=False),  # fly
    CapabilityType("a2"),   # freezer
    CapabilityType("a3"),   # deliver materials
    CapabilityType("a4"),   # perception
    CapabilityType("a5"),   # remove harmful materials
    CapabilityType("a6"),   # viral test
    CapabilityType("a7"),   # treatment
    CapabilityType("a8"),   # spray disinfectant
    CapabilityType("a9"),   # signals and barricades
)

# expected capabilities; standard deviations are 10% of these
PANDEMIC_SPECIES = {
    "v1": {"a1": 1, "a3": 1, "a4": 1, "a8": 1},   # quadcopter
    "v2": {"a3": 1, "a9": 2},                     # vehicle
    "v3": {"a2": 1, "a3": 1},                     # vehicle with freezer
    "v4": {"a5": 1, "a8": 1},                     # contaminant vehicle
    "v5": {"a4": 1, "a9": 5},                     # guidance robot
    "v6": {"a6": 1},                              # test robot
    "v7": {"a6": 1, "a7": 1},                     # treatment robot
}

# threshold multipliers of gamma; ("fixed", v) entries are not scaled
PANDEMIC_TASK_TYPES = {
    "m1": {"a3": 1},
    "m2": {"a1": ("fixed", 1), "a3": 1},
    "m3": {"a2": 1, "a3": 1},
    "m4": {"a5": 1, "a8": 1},
    "m5": {"a4": 1, "a5": 1, "a8": 2},
    "m6": {"a3": 1, "a4": 1, "a5": 1, "a8": 1, "a9": 10},
    "m7": {"a6": 1},
    "m8": {"a6": 1, "a7": 1},
}

STD_FRACTION = 0.1


def _pandemic_species(counts, service_time: float) -> list[Species]:
    out = []
    for (k, caps), n in zip(PANDEMIC_SPECIES.items(), counts):
        out.append(Species(k, int(n), {a: Gaussian(float(m), STD_FRACTION * m) for a, m in caps.items()},
                           service_time={}, energy_capacity=math.inf))
    return out


def _pandemic_tasks(n_tasks: int, gamma: float) -> list[Task]:
    types = list(PANDEMIC_TASK_TYPES)
    tasks = []
    for i in range(n_tasks):
        reqs = PANDEMIC_TASK_TYPES[types[i % len(types)]]
        atoms = []
        for a, mult in reqs.items():
            value = mult[1] if isinstance(mult, tuple) else mult * gamma
            atoms.append(Atom(a, PointMass(float(value))))
        tasks.append(Task(f"m{i + 1}", And(*atoms), location=f"m{i + 1}"))
    return tasks


def pandemic_case(case: BenchCase, cost_matrix=None, *, service_time: float = 1.0,
                  **problem_kw) -> Problem:
    """Build the service-robot scenario for ``case``.

    Task ``m_i`` has type ``((i - 1) mod 8) + 1``, so ``m_i`` and ``m_{i+8}``
    share requirements at different locations.  ``cost_matrix`` is a mapping
    ``(species, from, to) -> (energy, time)`` or a CSV path; the base is
    addressed as ``start`` / ``terminal`` and tasks by their ids.
    """
    if case.n_species != len(PANDEMIC_SPECIES):
        raise ValueError(f"the service scenario has {len(PANDEMIC_SPECIES)} species")
    if cost_matrix is None:
        raise MissingCostMatrix(f"case {case.case_id!r}: no cost matrix supplied")
    if isinstance(cost_matrix, (str, Path)):
        cost_matrix = read_cost_csv(cost_matrix)
    species = _pandemic_species(case.species_counts, service_time)
    tasks = _pandemic_tasks(case.tasks, case.gamma)
    species = [Species(s.id, s.count, s.capabilities, s.energy_capacity,
                       {t.id: service_time for t in tasks}) for s in species]
    try:
        graph = build_graph(species, tasks, cost_matrix)
    except ModelError as exc:
        raise MissingCostMatrix(f"case {case.case_id!r}: {exc}") from exc
    problem_kw.setdefault("seed", case.seed)
    return Problem(species, tasks, PANDEMIC_CAPABILITIES, graph, **problem_kw)


def bench_grid(tasks=(16, 24, 32, 40), agents=(21, 70, 140), gammas=(1, 3, 5, 10), seed: int = 0) -> list[BenchCase]:
    """Cartesian benchmark grid, ids ``t{tasks}-a{agents}-g{gamma}``."""
    return [BenchCase(f"t{t}-a{a}-g{g:g}", t, a, float(g), seed)
            for t, a, g in itertools.product(tasks, agents, gammas)]


def load_bench_cases(path) -> list[BenchCase]:
    doc = json.loads(Path(path).read_text())
    records = doc["cases"] if isinstance(doc, dict) else doc
    return [BenchCase(**rec) for rec in records]


def dump_bench_cases(cases, path=None) -> str:
    text = json.dumps({"schema": 1, "cases": [asdict(c) for c in cases]}, indent=2)
    if path is not None:
        Path(path).write_text(text)
    return text


# cost matrices ---------------------------------------------------------------------

def synthetic_cost_matrix(species_ids, locations, seed: int = 0, *, extent: float = 10.0,
                          speed=None, energy_rate=None) -> dict:
    """Euclidean energy/time matrix over random points in a square.

    ``locations`` lists task location keys; the base is drawn first and used
    for both ``start`` and ``terminal``.  Per-species factors scale distance
    into energy (``energy_rate``) and time (``1 / speed``).
    """
    rng = np.random.default_rng(derive_seed(seed, "costs"))
    keys = [START] + list(locations)
    pts = rng.uniform(0.0, extent, size=(len(keys), 2))
    pos = dict(zip(keys, pts))
    pos[END] = pos[START]
    speed = speed or {}
    energy_rate = energy_rate or {}
    out = {}
    for k in species_ids:
        v = float(speed.get(k, 1.0))
        rate = float(energy_rate.get(k, 1.0))
        for a in pos:
            for b in pos:
                if a == b:
                    continue
                d = float(np.hypot(*(pos[a] - pos[b])))
                out[(k, a, b)] = (round(rate * d, 6), round(d / v, 6))
    return out


def read_cost_csv(path) -> dict:
    """Read ``species,from,to,energy,time`` rows into a cost mapping."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise MissingCostMatrix(f"cannot read cost matrix {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        need = {"species", "from", "to", "energy", "time"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise MissingCostMatrix(f"{path}: header must contain {sorted(need)}")
        return {(r["species"], r["from"], r["to"]): (float(r["energy"]), float(r["time"])) for r in reader}


def write_cost_csv(costs: dict, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["species", "from", "to", "energy", "time"])
    for (k, a, b), (e, t) in sorted(costs.items()):
        w.writerow([k, a, b, repr(float(e)), repr(float(t))])
    if path is not None:
        Path(path).write_text(buf.getvalue())
    return buf.getvalue()


# random instances ------------------------------------------------------------------

def random_flow_network(n_nodes: int, max_flow: float, seed: int, *, n_paths: int | None = None,
                        max_cost: float = 10.0, spare_edges: float = 0.1,
                        integral: bool = False) -> FlowNetwork:
    """Conserved flow on a random DAG from ``start`` to ``terminal``.

    ``n_nodes`` counts the source and sink.  Flow is injected along
    ``n_paths`` random monotone paths with amounts uniform on
    ``(0, max_flow]`` (one unit each when ``integral``), so conservation
    holds by construction.  Edge costs are uniform on ``[1, max_cost]``; a
    fraction ``spare_edges`` of unused forward edges is kept at zero flow.
    """
    if n_nodes < 3:
        raise ValueError("need at least one node between source and sink")
    rng = np.random.default_rng(derive_seed(seed, "flow-network"))
    inner = [f"m{i + 1}" for i in range(n_nodes - 2)]
    order = [START] + [inner[i] for i in rng.permutation(len(inner))] + [END]
    n_paths = n_paths if n_paths is not None else max(2, len(inner))
    flows: dict = {}
    for _ in range(n_paths):
        stops = sorted(rng.choice(np.arange(1, len(order) - 1), size=rng.integers(1, min(3, len(inner)) + 1),
                              replace=False))
        path = [order[0]] + [order[s] for s in stops] + [order[-1]]
        amount = 1.0 if integral else float(max_flow * (1.0 - rng.random()))
        for e in zip(path[:-1], path[1:]):
            flows[e] = flows.get(e, 0.0) + amount
    for a, b in itertools.combinations(range(len(order)), 2):
        e = (order[a], order[b])
        if e not in flows and (a, b) != (0, len(order) - 1) and rng.random() < spare_edges:
            flows[e] = 0.0
    costs = {e: float(np.round(rng.uniform(1.0, max_cost), 2)) for e in flows}
    return FlowNetwork(flows, costs)


def random_teaming_problem(n_species: int, n_tasks: int, seed: int, *, max_count: int = 2,
                           n_samples: int = 50, noncumulative: bool = True, disjunctions: bool = False,
                           **problem_kw) -> Problem:
    """Small feasible teaming instance with Gaussian capabilities.

    Two cumulative capabilities and one non-cumulative capability are used.
    The non-cumulative threshold is met by at least one species, and each
    cumulative threshold is at most 60% of what the species passing that
    threshold can supply together, so the expected-value rows are satisfiable.
    """
    rng = np.random.default_rng(derive_seed(seed, "teaming"))
    caps = [CapabilityType("c1"), CapabilityType("c2"), CapabilityType("s1", cumulative=False)]
    counts = rng.integers(1, max_count + 1, size=n_species)
    tasks_ids = [f"m{i + 1}" for i in range(n_tasks)]
    species = []
    for k in range(n_species):
        means = rng.uniform(0.5, 3.0, size=3)
        rel = rng.uniform(0.05, 0.25, size=3)
        dists = {c.id: Gaussian(float(m), float(m * r)) for c, m, r in zip(caps, means, rel)}
        species.append(Species(f"v{k + 1}", int(counts[k]), dists,
                               service_time={t: float(np.round(rng.uniform(0.0, 2.0), 3)) for t in tasks_ids}))
    best_speed = max(expectation(s.capability("s1")) for s in species)
    tasks = []
    for t in tasks_ids:
        eligible, extra = species, []
        if noncumulative and rng.random() < 0.3:
            speed = float(np.round(rng.uniform(0.3, 1.0) * best_speed, 3))
            eligible = [s for s in species if expectation(s.capability("s1")) >= speed]
            extra.append(Atom("s1", PointMass(speed)))
        atoms = []
        for a in ("c1", "c2"):
            if a == "c1" or rng.random() < 0.5:
                total = sum(expectation(s.capability(a)) * s.count for s in eligible)
                mean = float(rng.uniform(0.2, 0.6) * total)
                atoms.append(Atom(a, Gaussian(mean, float(0.1 * mean))))
        atoms += extra
        expr = And(*atoms) if len(atoms) > 1 else atoms[0]
        if disjunctions and len(atoms) > 1 and rng.random() < 0.5:
            expr = Or(*atoms)
        tasks.append(Task(t, expr))
    speeds = {s.id: float(rng.uniform(0.8, 1.5)) for s in species}
    rates = {s.id: float(rng.uniform(0.5, 1.5)) for s in species}
    costs = synthetic_cost_matrix([s.id for s in species], tasks_ids, seed, speed=speeds, energy_rate=rates)
    problem_kw.setdefault("n_samples", n_samples)
    problem_kw.setdefault("seed", seed)
    return Problem(species, tasks, caps, build_graph(species, tasks, costs), **problem_kw)


# success probability -------------------------------------------------------------------

@dataclass
class SuccessReport:
    per_task: dict
    mean: float
    method: str = "closed-form"
    std_error: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"per_task": self.per_task, "mean": self.mean, "method": self.method,
                "std_error": self.std_error}


def _closed_form(d) -> bool:
    return isinstance(d, (Gaussian, PointMass))


def _normal_tail(mu: float, sd: float) -> float:
    """P(N(mu, sd^2) >= 0), inclusive when ``sd == 0``."""
    if sd <= 0:
        return 1.0 if mu >= -1e-12 else 0.0
    return float(ndtr(mu / sd))


def _atom_probability(atom: Atom, team: dict, problem: Problem) -> float:
    cap = problem.capability_type(atom.capability)
    g_mu, g_sd = expectation(atom.threshold), std(atom.threshold)
    present = {k: n for k, n in team.items() if n > 0}
    if cap.cumulative:
        mu = sum(expectation(problem.species_by_id(k).capability(atom.capability)) * n for k, n in present.items())
        var = sum((std(problem.species_by_id(k).capability(atom.capability)) * n) ** 2 for k, n in present.items())
        return _normal_tail(mu - g_mu, math.sqrt(var + g_sd ** 2))
    if not present:
        return 0.0
    p = 1.0
    for k in present:
        c = problem.species_by_id(k).capability(atom.capability)
        p *= _normal_tail(expectation(c) - g_mu, math.hypot(std(c), g_sd))
    return p


def requirement_probability(expr, team: dict, problem: Problem) -> float:
    """Probability that ``expr`` holds for ``team`` (independent atoms)."""
    if isinstance(expr, Atom):
        return _atom_probability(expr, team, problem)
    probs = [requirement_probability(c, team, problem) for c in expr.children]
    if isinstance(expr, And):
        return float(np.prod(probs))
    return float(1.0 - np.prod([1.0 - p for p in probs]))


def _monte_carlo(task: Task, team: dict, problem: Problem, n: int, seed: int) -> tuple[float, float]:
    from .model import evaluate_requirement
    alphas, gammas = {}, {}
    for atom in iter_atoms(task.requirement):
        a = atom.capability
        realized = {k: sample(problem.species_by_id(k).capability(a), n,
                              derive_seed(seed, "mc", task.id, a, k)).values for k in team}
        gammas[a] = sample(atom.threshold, n, derive_seed(seed, "mc", task.id, a, "threshold")).values
        cap = problem.capability_type(a)
        if cap.cumulative:
            alphas[a] = sum(realized[k] * team[k] for k in team) if team else np.zeros(n)
        else:
            present = [k for k, c in team.items() if c > 0]
            alphas[a] = np.min([realized[k] for k in present], axis=0) if present else np.full(n, -np.inf)
    hits = np.array([evaluate_requirement(task.requirement, {a: v[s] for a, v in alphas.items()},
                                          {a: v[s] for a, v in gammas.items()}) for s in range(n)])
    p = float(hits.mean())
    return p, math.sqrt(max(p * (1 - p), 0.0) / n)


def _teams_of(plan) -> dict:
    teams = plan.teams if hasattr(plan, "teams") else plan
    return {t: {k: float(n) for k, n in team.items()} for t, team in teams.items()}


def success_probability(plan, problem: Problem, *, mc_samples: int = 20_000, seed: int = 0) -> SuccessReport:
    """Per-task probability of meeting the requirement and their geometric mean.

    ``plan`` is a :class:`~ctas.pipeline.Plan` or a mapping
    ``task -> {species: count}``.  Cumulative team capability is Gaussian with
    mean ``sum n_k mu_k`` and variance ``sum (n_k sigma_k)^2`` (every agent
    of a species shares one realization, as in the sampled model).  When any
    involved distribution is not Gaussian or a point mass, the task is
    scored by Monte Carlo and its standard error is reported.
    """
    teams = _teams_of(plan)
    per_task, errors = {}, {}
    method = "closed-form"
    for task in problem.tasks:
        team = {k: n for k, n in teams.get(task.id, {}).items() if n > 0}
        dists = [a.threshold for a in iter_atoms(task.requirement)]
        dists += [problem.species_by_id(k).capability(a.capability) for a in iter_atoms(task.requirement) for k in team]
        if all(_closed_form(d) for d in dists):
            per_task[task.id] = requirement_probability(task.requirement, team, problem)
        else:
            method = "monte-carlo"
            per_task[task.id], errors[task.id] = _monte_carlo(task, team, problem, mc_samples, seed)
    if not per_task:
        return SuccessReport({}, 1.0, method, errors)
    probs = np.array(list(per_task.values()))
    mean = 0.0 if np.any(probs <= 0) else float(np.exp(np.mean(np.log(probs))))
    return SuccessReport(per_task, mean, method, errors)

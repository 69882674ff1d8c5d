"""Domain types for the heterogeneous teaming problem.

A :class:`Problem` bundles agent species, tasks with boolean requirement
trees, capability types and the per-species routing graph.  Every species
``k`` owns a start node and a terminal node; in edge records and cost
matrices those are addressed by the reserved names :data:`START` and
:data:`END`, so the same task graph can be shared by all species.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence, Union

from .distributions import (
    Distribution,
    PointMass,
    as_distribution,
    distribution_from_dict,
    distribution_to_dict,
    expectation,
)

START = "start"
END = "terminal"

__all__ = [
    "START",
    "END",
    "ModelError",
    "IncompleteCostMatrix",
    "UndefinedAggregate",
    "UnknownCapability",
    "CapabilityType",
    "Species",
    "Atom",
    "And",
    "Or",
    "RequirementExpr",
    "Task",
    "TeamGraph",
    "Problem",
    "build_graph",
    "team_capability",
    "evaluate_requirement",
    "iter_atoms",
    "problem_from_dict",
    "problem_to_dict",
]


class ModelError(ValueError):
    """Raised when a problem definition is inconsistent."""


class IncompleteCostMatrix(ModelError):
    def __init__(self, species, pair):
        self.species = species
        self.pair = pair
        super().__init__(f"incomplete cost matrix: species {species!r} has no entry for {pair[0]!r} -> {pair[1]!r}")


class UndefinedAggregate(ModelError):
    """Non-cumulative capability of an empty team."""


class UnknownCapability(KeyError):
    pass


@dataclass(frozen=True)
class CapabilityType:
    id: str
    cumulative: bool = True


@dataclass(frozen=True)
class Species:
    id: str
    count: int
    capabilities: Mapping[str, Distribution] = field(default_factory=dict)
    energy_capacity: float = math.inf
    service_time: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.count < 0 or int(self.count) != self.count:
            raise ModelError(f"species {self.id!r}: count must be a non-negative integer")
        if not self.energy_capacity >= 0:
            raise ModelError(f"species {self.id!r}: energy capacity must be >= 0")
        if any(t < 0 for t in self.service_time.values()):
            raise ModelError(f"species {self.id!r}: service times must be >= 0")
        object.__setattr__(self, "capabilities",
                           {a: as_distribution(d) for a, d in self.capabilities.items()})

    def capability(self, cap_id: str) -> Distribution:
        """Capability distribution; species lacking the capability contribute 0."""
        return self.capabilities.get(cap_id, PointMass(0.0))

    def service(self, task_id: str) -> float:
        return float(self.service_time.get(task_id, 0.0))


@dataclass(frozen=True)
class Atom:
    capability: str
    threshold: Distribution

    def __post_init__(self):
        object.__setattr__(self, "threshold", as_distribution(self.threshold))


@dataclass(frozen=True)
class And:
    children: tuple

    def __init__(self, *children):
        if len(children) == 1 and isinstance(children[0], (list, tuple)):
            children = tuple(children[0])
        object.__setattr__(self, "children", tuple(children))


@dataclass(frozen=True)
class Or:
    children: tuple

    def __init__(self, *children):
        if len(children) == 1 and isinstance(children[0], (list, tuple)):
            children = tuple(children[0])
        object.__setattr__(self, "children", tuple(children))


RequirementExpr = Union[Atom, And, Or]


def iter_atoms(expr: RequirementExpr) -> Iterator[Atom]:
    if isinstance(expr, Atom):
        yield expr
    else:
        for child in expr.children:
            yield from iter_atoms(child)


@dataclass(frozen=True)
class Task:
    id: str
    requirement: RequirementExpr
    location: str | None = None

    def __post_init__(self):
        if self.id in (START, END):
            raise ModelError(f"task id {self.id!r} is reserved")
        if not any(True for _ in iter_atoms(self.requirement)):
            raise ModelError(f"task {self.id!r} has an empty requirement")

    @property
    def key(self) -> str:
        """Key used to look the task up in cost matrices."""
        return self.location if self.location is not None else self.id


@dataclass(frozen=True)
class TeamGraph:
    """Per-species directed graph over start, task and terminal nodes.

    ``edges`` maps ``(species, from, to)`` to ``(energy, time)`` where
    ``from``/``to`` are task ids or :data:`START` / :data:`END`.
    """

    species: tuple
    tasks: tuple
    edges: Mapping[tuple, tuple]

    def edges_of(self, species_id: str) -> list[tuple[str, str]]:
        return [(i, j) for (k, i, j) in self.edges if k == species_id]

    def energy(self, k, i, j) -> float:
        return self.edges[(k, i, j)][0]

    def time(self, k, i, j) -> float:
        return self.edges[(k, i, j)][1]

    def __len__(self):
        return len(self.edges)


def _topology(tasks: Sequence[str]) -> list[tuple[str, str]]:
    pairs = [(START, i) for i in tasks] + [(i, END) for i in tasks]
    pairs += [(i, j) for i in tasks for j in tasks if i != j]
    return pairs


def _lookup(costs, species_id, frm, to):
    rec = costs.get((species_id, frm, to))
    if rec is None:
        return None
    if isinstance(rec, Mapping):
        return float(rec["energy"]), float(rec["time"])
    energy, time = rec
    return float(energy), float(time)


def build_graph(species: Sequence[Species], tasks: Sequence[Task],
                cost_matrices: Mapping[tuple, object]) -> TeamGraph:
    """Build the species-level routing graph.

    ``cost_matrices`` maps ``(species_id, from_key, to_key)`` to
    ``(energy, time)`` (or a dict with those keys).  Task endpoints are looked
    up by :attr:`Task.key`.  Each species gets ``n(n-1) + 2n`` edges for
    ``n`` tasks.
    """
    by_id = {t.id: t for t in tasks}
    key_of = {START: START, END: END, **{t.id: t.key for t in tasks}}
    edges = {}
    for sp in species:
        for i, j in _topology(list(by_id)):
            rec = _lookup(cost_matrices, sp.id, key_of[i], key_of[j])
            if rec is None:
                raise IncompleteCostMatrix(sp.id, (i, j))
            energy, time = rec
            if energy < 0 or time < 0 or not (math.isfinite(energy) and math.isfinite(time)):
                raise ModelError(f"edge {sp.id}:{i}->{j} needs finite non-negative energy and time")
            edges[(sp.id, i, j)] = (energy, time)
    return TeamGraph(species=tuple(s.id for s in species), tasks=tuple(by_id), edges=edges)


def team_capability(team: Mapping[str, float], capability: Union[CapabilityType, bool],
                    realized: Mapping[str, float]) -> float:
    """Aggregate capability of a team: sum for cumulative, min otherwise."""
    cumulative = capability.cumulative if isinstance(capability, CapabilityType) else bool(capability)
    if any(n < 0 for n in team.values()):
        raise ModelError("team counts must be non-negative")
    present = [k for k, n in team.items() if n > 0]
    if cumulative:
        return float(sum(realized[k] * team[k] for k in present))
    if not present:
        raise UndefinedAggregate("non-cumulative capability of an empty team is undefined")
    return float(min(realized[k] for k in present))


def evaluate_requirement(expr: RequirementExpr, realized_alpha: Mapping[str, float],
                         realized_gamma: Mapping[str, float]) -> bool:
    if isinstance(expr, Atom):
        try:
            return realized_alpha[expr.capability] >= realized_gamma[expr.capability]
        except KeyError as exc:
            raise UnknownCapability(f"no realized value for capability {exc.args[0]!r}") from None
    if isinstance(expr, And):
        return all(evaluate_requirement(c, realized_alpha, realized_gamma) for c in expr.children)
    if isinstance(expr, Or):
        return any(evaluate_requirement(c, realized_alpha, realized_gamma) for c in expr.children)
    raise TypeError(f"not a requirement expression: {expr!r}")


@dataclass(frozen=True)
class Problem:
    species: tuple
    tasks: tuple
    capabilities: tuple
    graph: TeamGraph
    C_e: float = 1.0
    C_q: float = 1.0
    C_h: float = 1.0
    beta: float = 0.9
    n_samples: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("species", "tasks", "capabilities"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.species:
            raise ModelError("a problem needs at least one species")
        if not 0.0 < self.beta < 1.0:
            raise ModelError(f"beta must lie in (0, 1), got {self.beta}")
        if self.n_samples < 1:
            raise ModelError("n_samples must be >= 1")
        if min(self.C_e, self.C_q, self.C_h) < 0:
            raise ModelError("penalty weights must be non-negative")
        _unique([c.id for c in self.capabilities], "capability")
        _unique([s.id for s in self.species], "species")
        _unique([t.id for t in self.tasks], "task")
        caps = {c.id for c in self.capabilities}
        for sp in self.species:
            unknown = set(sp.capabilities) - caps
            if unknown:
                raise ModelError(f"species {sp.id!r} references unknown capabilities {sorted(unknown)}")
        for task in self.tasks:
            seen = set()
            for atom in iter_atoms(task.requirement):
                if atom.capability not in caps:
                    raise ModelError(f"task {task.id!r} requires unknown capability {atom.capability!r}")
                if atom.capability in seen:
                    raise ModelError(f"task {task.id!r} mentions capability {atom.capability!r} twice")
                seen.add(atom.capability)
        expected = {(k, i, j) for k in (s.id for s in self.species)
                    for i, j in _topology([t.id for t in self.tasks])}
        if set(self.graph.edges) != expected:
            raise ModelError("graph does not match the species/task topology")

    def capability_type(self, cap_id: str) -> CapabilityType:
        for c in self.capabilities:
            if c.id == cap_id:
                return c
        raise UnknownCapability(cap_id)

    def species_by_id(self, k: str) -> Species:
        for s in self.species:
            if s.id == k:
                return s
        raise KeyError(k)

    def task_by_id(self, i: str) -> Task:
        for t in self.tasks:
            if t.id == i:
                return t
        raise KeyError(i)

    def expected_capability(self, k: str, a: str) -> float:
        return expectation(self.species_by_id(k).capability(a))

    def replace(self, **changes) -> "Problem":
        from dataclasses import replace
        return replace(self, **changes)


def _unique(ids: Iterable[str], what: str):
    ids = list(ids)
    if len(ids) != len(set(ids)):
        raise ModelError(f"duplicate {what} ids")


# JSON encoding ------------------------------------------------------------

def requirement_from_dict(rec) -> RequirementExpr:
    if "atom" in rec:
        threshold = rec["threshold"]
        dist = distribution_from_dict(threshold) if isinstance(threshold, Mapping) else as_distribution(threshold)
        return Atom(rec["atom"], dist)
    if "and" in rec:
        return And(tuple(requirement_from_dict(c) for c in rec["and"]))
    if "or" in rec:
        return Or(tuple(requirement_from_dict(c) for c in rec["or"]))
    raise ModelError(f"cannot parse requirement {rec!r}")


def requirement_to_dict(expr: RequirementExpr) -> dict:
    if isinstance(expr, Atom):
        return {"atom": expr.capability, "threshold": distribution_to_dict(expr.threshold)}
    key = "and" if isinstance(expr, And) else "or"
    return {key: [requirement_to_dict(c) for c in expr.children]}


def problem_from_dict(doc: Mapping) -> Problem:
    caps = [CapabilityType(c["id"], bool(c.get("cumulative", True))) for c in doc.get("capabilities", [])]
    species = []
    for s in doc.get("species", []):
        capabilities = {a: (distribution_from_dict(d) if isinstance(d, Mapping) else as_distribution(d))
                        for a, d in s.get("capabilities", {}).items()}
        cap = s.get("energy_capacity")
        species.append(Species(
            id=s["id"], count=int(s["count"]), capabilities=capabilities,
            energy_capacity=math.inf if cap is None else float(cap),
            service_time={k: float(v) for k, v in s.get("service_time", {}).items()},
        ))
    tasks = [Task(t["id"], requirement_from_dict(t["requirement"]), t.get("location"))
             for t in doc.get("tasks", [])]
    costs = {(e["species"], e["from"], e["to"]): (float(e["energy"]), float(e["time"]))
             for e in doc.get("edges", [])}
    graph = build_graph(species, tasks, costs)
    weights = doc.get("weights", {})
    return Problem(
        species=species, tasks=tasks, capabilities=caps, graph=graph,
        C_e=float(weights.get("C_e", 1.0)), C_q=float(weights.get("C_q", 1.0)),
        C_h=float(weights.get("C_h", 1.0)), beta=float(doc.get("beta", 0.9)),
        n_samples=int(doc.get("n_samples", 100)), seed=int(doc.get("seed", 0)),
    )


def problem_to_dict(problem: Problem) -> dict:
    species = []
    for s in problem.species:
        species.append({
            "id": s.id,
            "count": s.count,
            "capabilities": {a: distribution_to_dict(d) for a, d in s.capabilities.items()},
            "energy_capacity": None if math.isinf(s.energy_capacity) else s.energy_capacity,
            "service_time": dict(s.service_time),
        })
    tasks = []
    for t in problem.tasks:
        rec = {"id": t.id, "requirement": requirement_to_dict(t.requirement)}
        if t.location is not None:
            rec["location"] = t.location
        tasks.append(rec)
    key_of = {START: START, END: END, **{t.id: t.key for t in problem.tasks}}
    edges = {}
    for (k, i, j), (energy, time) in problem.graph.edges.items():
        edges[(k, key_of[i], key_of[j])] = {"species": k, "from": key_of[i], "to": key_of[j],
                                            "energy": energy, "time": time}
    return {
        "schema": 1,
        "capabilities": [{"id": c.id, "cumulative": c.cumulative} for c in problem.capabilities],
        "species": species,
        "tasks": tasks,
        "edges": list(edges.values()),
        "weights": {"C_e": problem.C_e, "C_q": problem.C_q, "C_h": problem.C_h},
        "beta": problem.beta,
        "n_samples": problem.n_samples,
        "seed": problem.seed,
    }

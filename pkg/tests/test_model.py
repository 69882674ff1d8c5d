import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctas.distributions import Gaussian
from ctas.model import (
    END,
    START,
    And,
    Atom,
    CapabilityType,
    IncompleteCostMatrix,
    ModelError,
    Or,
    Problem,
    Species,
    Task,
    UndefinedAggregate,
    UnknownCapability,
    build_graph,
    evaluate_requirement,
    problem_from_dict,
    problem_to_dict,
    team_capability,
)
from oracles import eval_tree


def full_costs(species, keys, value=(1.0, 1.0)):
    nodes = [START, END] + list(keys)
    return {(k, a, b): value for k in species for a in nodes for b in nodes if a != b}


def make_problem(n_species=2, n_tasks=2, **kw):
    caps = [CapabilityType("a1"), CapabilityType("a2", cumulative=False)]
    species = [Species(f"k{i}", 2, {"a1": Gaussian(1.0, 0.1), "a2": 3.0}) for i in range(n_species)]
    tasks = [Task(f"m{i}", And(Atom("a1", 1.0), Atom("a2", 2.0))) for i in range(n_tasks)]
    graph = build_graph(species, tasks, full_costs([s.id for s in species], [t.id for t in tasks]))
    return Problem(species, tasks, caps, graph, **kw)


@pytest.mark.parametrize("n_species,n_tasks,expected", [(3, 2, 18), (1, 1, 2), (7, 16, 1904)])
def test_edge_count(n_species, n_tasks, expected):
    species = [Species(f"k{i}", 1) for i in range(n_species)]
    tasks = [Task(f"m{i}", Atom("a", 1.0)) for i in range(n_tasks)]
    g = build_graph(species, tasks, full_costs([s.id for s in species], [t.id for t in tasks]))
    assert len(g) == expected
    # oracle: explicit enumeration of the topology
    ids = [t.id for t in tasks]
    per = len([(START, i) for i in ids]) + len([(i, END) for i in ids]) + len(list(itertools.permutations(ids, 2)))
    assert len(g) == n_species * per


def test_graph_topology_invariant():
    p = make_problem(2, 3)
    for k in ("k0", "k1"):
        edges = set(p.graph.edges_of(k))
        for i, j in itertools.permutations(["m0", "m1", "m2"], 2):
            assert (i, j) in edges
        assert not any(j == START or i == END for i, j in edges)
        assert not any(i == j for i, j in edges)


def test_missing_cost_names_pair():
    species = [Species("k", 1)]
    tasks = [Task("m", Atom("a", 1.0))]
    costs = full_costs(["k"], ["m"])
    del costs[("k", "m", END)]
    with pytest.raises(IncompleteCostMatrix) as err:
        build_graph(species, tasks, costs)
    assert "k" in str(err.value) and "m" in str(err.value)


def test_task_location_is_cost_key():
    species = [Species("k", 1)]
    tasks = [Task("m", Atom("a", 1.0), location="here")]
    g = build_graph(species, tasks, full_costs(["k"], ["here"], (2.0, 3.0)))
    assert g.energy("k", START, "m") == 2.0 and g.time("k", "m", END) == 3.0


def test_team_capability_examples():
    team, realized = {"k1": 2, "k2": 1}, {"k1": 3.0, "k2": 4.0}
    assert team_capability(team, CapabilityType("a"), realized) == 10.0
    assert team_capability(team, CapabilityType("a", False), realized) == 3.0
    for cum in (True, False):
        assert team_capability({"k": 1}, cum, {"k": 5.0}) == 5.0
    with pytest.raises(UndefinedAggregate):
        team_capability({"k": 0}, False, {"k": 1.0})


@given(st.lists(st.integers(0, 5), min_size=1, max_size=4), st.integers(0, 3),
       st.lists(st.floats(0, 10), min_size=4, max_size=4))
def test_team_capability_monotone(counts, bump, values):
    ids = [f"k{i}" for i in range(len(counts))]
    realized = dict(zip(ids, values))
    team = dict(zip(ids, counts))
    more = dict(team, k0=team["k0"] + bump)
    assert team_capability(more, True, realized) >= team_capability(team, True, realized)
    if any(counts):
        low = dict(team, extra=1)
        r2 = dict(realized, extra=min(values) - 1.0)
        assert team_capability(low, False, r2) <= team_capability(team, False, realized)


def test_requirement_examples():
    expr = And(Or(Atom("a1", 1.0), Atom("a2", 1.0)), Atom("a3", 1.0), Atom("a4", 1.0))
    g = {a: 2.0 for a in ("a1", "a2", "a3", "a4")}
    assert evaluate_requirement(expr, dict(g), g)  # all equal: >= is inclusive
    assert not evaluate_requirement(Or(Atom("a1", 0.0), Atom("a2", 0.0)), {"a1": 0, "a2": 0}, {"a1": 1, "a2": 1})
    with pytest.raises(UnknownCapability):
        evaluate_requirement(Atom("zz", 1.0), {}, {})


def trees(depth):
    leaf = st.sampled_from(["a0", "a1", "a2", "a3", "a4", "a5"]).map(lambda a: ("atom", a))
    if depth == 0:
        return leaf
    sub = trees(depth - 1)
    return st.one_of(leaf, st.tuples(st.sampled_from(["and", "or"]), st.lists(sub, min_size=1, max_size=3)))


def to_expr(tree):
    if tree[0] == "atom":
        return Atom(tree[1], 0.0)
    children = [to_expr(c) for c in tree[1]]
    return And(*children) if tree[0] == "and" else Or(*children)


@settings(max_examples=200)
@given(trees(4), st.lists(st.sampled_from([-1.0, 0.0, 1.0]), min_size=6, max_size=6))
def test_requirement_matches_truth_table(tree, offsets):
    gamma = {f"a{i}": 2.0 for i in range(6)}
    alpha = {f"a{i}": 2.0 + d for i, d in enumerate(offsets)}
    assert evaluate_requirement(to_expr(tree), alpha, gamma) == eval_tree(tree, alpha, gamma)


def test_problem_validation():
    with pytest.raises(ModelError):
        make_problem(beta=1.0)
    with pytest.raises(ModelError):
        make_problem(n_samples=0)
    with pytest.raises(ModelError):
        make_problem(C_e=-1.0)
    with pytest.raises(ModelError):
        Species("k", -1)
    with pytest.raises(ModelError):
        Task(START, Atom("a", 1.0))


def test_unknown_capability_rejected():
    species = [Species("k", 1, {"a": 1.0})]
    tasks = [Task("m", Atom("zz", 1.0))]
    g = build_graph(species, tasks, full_costs(["k"], ["m"]))
    with pytest.raises(ModelError):
        Problem(species, tasks, [CapabilityType("a")], g)


def test_json_round_trip():
    p = make_problem()
    doc = problem_to_dict(p)
    assert doc["schema"] == 1
    q = problem_from_dict(doc)
    assert q == p or (q.graph.edges == p.graph.edges and q.species == p.species and q.tasks == p.tasks)
    assert math.isinf(q.species[0].energy_capacity)

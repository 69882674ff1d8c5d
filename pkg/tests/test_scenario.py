import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctas.distributions import Empirical, Gaussian, PointMass, expectation, std
from ctas.flows import validate_flow
from ctas.model import And, Atom, CapabilityType, Problem, Species, Task, build_graph, iter_atoms
from ctas.scenario import (
    PANDEMIC_SPECIES,
    BenchCase,
    MissingCostMatrix,
    bench_grid,
    dump_bench_cases,
    load_bench_cases,
    pandemic_case,
    random_flow_network,
    random_teaming_problem,
    read_cost_csv,
    success_probability,
    synthetic_cost_matrix,
    write_cost_csv,
)


def pandemic(tasks=16, agents=21, gamma=1.0, seed=0):
    case = BenchCase(f"t{tasks}", tasks, agents, gamma, seed)
    ids = [f"m{i + 1}" for i in range(tasks)]
    return pandemic_case(case, synthetic_cost_matrix(list(PANDEMIC_SPECIES), ids, seed))


@pytest.mark.parametrize("kw", [dict(tasks=0, agents=1), dict(tasks=1, agents=0), dict(tasks=1, agents=1, gamma=0)])
def test_bench_case_validation(kw):
    with pytest.raises(ValueError):
        BenchCase("x", **kw)


def test_species_counts_split_evenly():
    assert BenchCase("x", 16, 21).species_counts == [3] * 7
    counts = BenchCase("x", 16, 70 + 3).species_counts
    assert sum(counts) == 73 and max(counts) - min(counts) <= 1


def test_pandemic_numbers():
    p = pandemic(tasks=16, gamma=3.0)
    v1 = p.species_by_id("v1")
    assert v1.capability("a1") == Gaussian(1.0, 0.1)
    assert v1.capability("a9") == PointMass(0.0)
    assert p.species_by_id("v5").capability("a9") == Gaussian(5.0, 0.5)
    m6 = {a.capability: a.threshold for a in iter_atoms(p.task_by_id("m6").requirement)}
    assert m6["a9"] == PointMass(30.0) and m6["a3"] == PointMass(3.0)
    m2 = {a.capability: a.threshold for a in iter_atoms(p.task_by_id("m2").requirement)}
    assert m2["a1"] == PointMass(1.0)  # non-scaled
    # type repeats every eight tasks
    assert p.task_by_id("m14").requirement == p.task_by_id("m6").requirement
    assert not p.capability_type("a1").cumulative


def test_missing_costs():
    with pytest.raises(MissingCostMatrix):
        pandemic_case(BenchCase("x", 4, 7))
    partial = synthetic_cost_matrix(list(PANDEMIC_SPECIES), ["m1", "m2"], 0)
    with pytest.raises(MissingCostMatrix):
        pandemic_case(BenchCase("x", 3, 7), partial)
    with pytest.raises(MissingCostMatrix):
        pandemic_case(BenchCase("x", 3, 7), "/nonexistent/costs.csv")


def test_bench_grid_and_io(tmp_path):
    grid = bench_grid()
    assert len(grid) == 48 and len({c.case_id for c in grid}) == 48
    assert "t16-a21-g1" in {c.case_id for c in grid}
    path = tmp_path / "grid.json"
    dump_bench_cases(grid, path)
    assert load_bench_cases(path) == grid


def test_cost_csv_round_trip(tmp_path):
    costs = synthetic_cost_matrix(["v1", "v2"], ["m1", "m2"], 4)
    path = tmp_path / "c.csv"
    write_cost_csv(costs, path)
    assert read_cost_csv(path) == costs
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(MissingCostMatrix):
        read_cost_csv(bad)


def test_generators_are_deterministic():
    assert random_flow_network(9, 2.0, 17).flows == random_flow_network(9, 2.0, 17).flows
    a, b = random_teaming_problem(3, 4, 5), random_teaming_problem(3, 4, 5)
    assert a == b


def test_random_flow_networks_validate():
    for seed in range(1000):
        n = random_flow_network(3 + seed % 20, 3.0, seed)
        assert validate_flow(n).ok, seed


def test_random_flow_integral():
    n = random_flow_network(10, 1.0, 3, integral=True, n_paths=6)
    assert all(f == int(f) for f in n.flows.values())
    assert n.total_flow() == 6


# success probability ---------------------------------------------------------------


def tiny(threshold, caps=(Gaussian(1.0, 0.1),), cumulative=True, expr=None):
    ctype = CapabilityType("c", cumulative)
    species = [Species(f"v{k + 1}", 3, {"c": d}) for k, d in enumerate(caps)]
    task = Task("m1", expr if expr is not None else Atom("c", threshold))
    costs = {(s.id, a, b): (1.0, 1.0) for s in species for a in ("start", "m1") for b in ("m1", "terminal")
             if a != b}
    return Problem(species, [task], [ctype], build_graph(species, [task], costs))


def test_probability_half_at_the_mean():
    p = tiny(PointMass(2.0))
    assert success_probability({"m1": {"v1": 2}}, p).mean == pytest.approx(0.5)


def test_probability_quarter_for_two_half_atoms():
    species = [Species("v1", 3, {"a": Gaussian(1.0, 0.1), "b": Gaussian(1.0, 0.1)})]
    task = Task("m1", And(Atom("a", PointMass(3.0)), Atom("b", PointMass(3.0))))
    costs = {("v1", a, b): (1.0, 1.0) for a in ("start", "m1") for b in ("m1", "terminal") if a != b}
    p = Problem(species, [task], [CapabilityType("a"), CapabilityType("b")], build_graph(species, [task], costs))
    assert success_probability({"m1": {"v1": 3}}, p).mean == pytest.approx(0.25)


def test_probability_point_masses_met():
    p = tiny(PointMass(2.0), caps=(PointMass(1.0),))
    rep = success_probability({"m1": {"v1": 2}}, p)
    assert rep.mean == 1.0 and rep.method == "closed-form"
    assert success_probability({"m1": {"v1": 1}}, p).mean == 0.0


def test_probability_or_and_noncumulative():
    p = tiny(PointMass(0.9), caps=(Gaussian(1.0, 0.1), Gaussian(1.0, 0.1)), cumulative=False)
    one = success_probability({"m1": {"v1": 1}}, p).mean
    both = success_probability({"m1": {"v1": 1, "v2": 1}}, p).mean
    assert one == pytest.approx(0.8413447, abs=1e-6) and both == pytest.approx(one ** 2)
    assert success_probability({"m1": {}}, p).mean == 0.0


def mc_oracle(task, team, problem, n, rng):
    """Plain sampling: one realization per species per draw."""
    ok = np.ones(n, dtype=bool)

    def atom_ok(atom):
        g = draw(atom.threshold)
        ctype = problem.capability_type(atom.capability)
        vals = {k: draw(problem.species_by_id(k).capability(atom.capability)) for k in team}
        if ctype.cumulative:
            alpha = sum(vals[k] * c for k, c in team.items()) if team else np.zeros(n)
        else:
            alpha = np.min([vals[k] for k in team], axis=0) if team else np.full(n, -np.inf)
        return alpha >= g

    def draw(d):
        if isinstance(d, PointMass):
            return np.full(n, d.value)
        if isinstance(d, Gaussian):
            return rng.normal(d.mean, d.std, n)
        return rng.choice(np.array(d.samples), n)

    def walk(expr):
        if isinstance(expr, Atom):
            return atom_ok(expr)
        parts = [walk(c) for c in expr.children]
        return np.logical_and.reduce(parts) if isinstance(expr, And) else np.logical_or.reduce(parts)

    ok &= walk(task.requirement)
    return ok.mean()


@pytest.mark.slow
def test_closed_form_matches_sampling():
    rng = np.random.default_rng(123)
    n = 200_000
    misses = 0
    configs = 0
    for seed in range(25):
        p = random_teaming_problem(3, 2, seed, disjunctions=True)
        for task in p.tasks:
            team = {s.id: int(rng.integers(0, s.count + 1)) for s in p.species}
            team = {k: c for k, c in team.items() if c > 0} or {p.species[0].id: 1}
            cf = success_probability({t.id: team for t in p.tasks}, p).per_task[task.id]
            mc = mc_oracle(task, team, p, n, rng)
            se = math.sqrt(max(cf * (1 - cf), 1e-12) / n)
            configs += 1
            misses += abs(cf - mc) > 3 * se + 1e-9
    assert configs == 50
    assert misses <= 1


def test_monte_carlo_fallback_for_empirical():
    p = tiny(Empirical((1.0, 2.0, 3.0, 4.0)), caps=(PointMass(1.0),))
    rep = success_probability({"m1": {"v1": 2}}, p, mc_samples=20_000)
    assert rep.method == "monte-carlo"
    assert rep.per_task["m1"] == pytest.approx(0.5, abs=4 * rep.std_error["m1"] + 1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 5.0), st.floats(0.0, 2.0), st.integers(1, 3))
def test_probability_monotone_in_threshold(g, dg, n):
    lo = tiny(Gaussian(g, 0.2 * g))
    hi = tiny(Gaussian(g + dg, 0.2 * (g + dg)))
    team = {"m1": {"v1": n}}
    assert success_probability(team, hi).mean <= success_probability(team, lo).mean + 1e-12


def test_geometric_mean():
    species = [Species("v1", 3, {"c": Gaussian(1.0, 0.1)})]
    tasks = [Task("m1", Atom("c", PointMass(2.0))), Task("m2", Atom("c", PointMass(1.0)))]
    costs = synthetic_cost_matrix(["v1"], ["m1", "m2"], 0)
    p = Problem(species, tasks, [CapabilityType("c")], build_graph(species, tasks, costs))
    rep = success_probability({"m1": {"v1": 2}, "m2": {"v1": 1}}, p)
    assert rep.mean == pytest.approx(0.5)
    assert expectation(p.species[0].capability("c")) == 1.0 and std(PointMass(1.0)) == 0.0

import csv
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctas.distributions import PointMass
from ctas.lp import from_arrays, simplex_solve
from ctas.lp.bnb import solve_milp
from ctas.lshaped import (
    ScenarioDual,
    evaluate_master_point,
    make_cut,
    new_master,
    run_lshaped,
    solve_master,
    solve_scenarios,
)
from ctas.milp_builder import ScenarioBlock, build_extensive_form, draw_scenarios, formulate
from ctas.model import CapabilityType, Problem, Species, Task, build_graph, Atom
from ctas.scenario import random_teaming_problem


def block(rng, K=3, n=20):
    return ScenarioBlock(rng.uniform(0, 2, (K, n)), rng.uniform(1, 4, n))


def test_scenario_duals_closed_form():
    b = ScenarioBlock(np.array([[1.0, 3.0]]), np.array([2.0, 2.0]))
    d = solve_scenarios([1.0], 0.0, b)
    assert d[0] == ScenarioDual(1, 1.0)   # 2 - 1 - 0 = 1 >= 0
    assert d[1] == ScenarioDual(0, 0.0)   # 2 - 3 < 0


@pytest.mark.parametrize("seed", range(100))
def test_duals_match_simplex(seed):
    rng = np.random.default_rng(seed)
    c, g, y, lam = rng.uniform(0, 2, 2), rng.uniform(0, 4), rng.uniform(0, 2, 2), rng.uniform(-1, 1)
    rhs = g - c @ y - lam
    if abs(rhs) < 1e-9:
        return
    # min w  s.t.  w >= rhs, w >= 0
    sol = simplex_solve(from_arrays([1.0], A_ge=[[1.0]], b_ge=[rhs]))
    d = solve_scenarios(y, lam, ScenarioBlock(c.reshape(2, 1), np.array([g])))[0]
    assert d.pi == pytest.approx(sol.duals[0], abs=1e-9)
    assert d.w == pytest.approx(sol.x[0], abs=1e-9)


def test_cut_coefficients():
    rng = np.random.default_rng(0)
    b = block(rng)
    D, d = make_cut([ScenarioDual(0, 0.0)] * b.n, b)
    assert np.all(D == 0) and d == 0
    D, d = make_cut([ScenarioDual(1, 0.0)] * b.n, b)
    assert np.allclose(D[:-1], b.capability.sum(axis=1)) and D[-1] == b.n
    assert d == pytest.approx(b.threshold.sum())


@settings(max_examples=100)
@given(st.lists(st.floats(0, 3), min_size=3, max_size=3), st.floats(-2, 2), st.floats(0, 50), st.integers(0, 10**6))
def test_cut_fires_exactly_when_violated(y, lam, theta, seed):
    b = block(np.random.default_rng(seed))
    D, d = make_cut(solve_scenarios(y, lam, b), b)
    tail = sum(s.w for s in solve_scenarios(y, lam, b))
    assert (D[:-1] @ np.array(y) + D[-1] * lam + theta < d - 1e-9) == (theta < tail - 1e-9 and tail > 0)


def test_master_without_cuts_is_deterministic_when_risk_free():
    p = random_teaming_problem(2, 3, 5, n_samples=10, C_h=0.0)
    state = new_master(p)
    assert state.cut_count(next(iter(state.formulation.vars.theta))) == 0
    m = solve_master(state)
    det = solve_milp(formulate(p, risk="none").instance)
    assert m.objective == pytest.approx(det.objective, rel=1e-7)
    vals = state.formulation.values(m.x)
    assert all(v == pytest.approx(0.0) for v in vals["theta"].values())


@pytest.mark.parametrize("seed,K,M,n", [(11, 2, 2, 30), (12, 3, 2, 40), (13, 2, 3, 25), (14, 1, 3, 1)])
def test_matches_extensive_form(seed, K, M, n):
    p = random_teaming_problem(K, M, seed, n_samples=n)
    sc = draw_scenarios(p)
    ref = solve_milp(build_extensive_form(p, sc).instance, gap_target=1e-9)
    res = run_lshaped(p, sc)
    assert res.converged
    assert res.objective == pytest.approx(ref.objective, rel=1e-4)
    # validity: the extensive optimum satisfies every cut
    f = build_extensive_form(p, sc)
    opt = solve_milp(f.instance, gap_target=1e-9)
    v = f.values(opt.x)
    for key, w_cols in f.vars.w.items():
        y = np.array([v["y"][(k, key[0])] for k in sc.species])
        lam = v["lam"][key]
        theta = sum(opt.x[c] for c in w_cols)
        D, d = make_cut(solve_scenarios(y, lam, sc[key]), sc[key])
        assert D[:-1] @ y + D[-1] * lam + theta >= d - 1e-6


def test_point_mass_converges_quickly():
    sp = [Species("k", 4, {"a": PointMass(1.0)})]
    tasks = [Task("m", Atom("a", 2.0))]
    from ctas.model import START, END
    costs = {("k", a, b): (1.0, 1.0) for a in (START, "m", END) for b in (START, "m", END) if a != b}
    p = Problem(sp, tasks, [CapabilityType("a")], build_graph(sp, tasks, costs), n_samples=20)
    res = run_lshaped(p)
    assert res.converged and res.iterations <= 2


def test_master_objective_monotone_and_log(tmp_path):
    p = random_teaming_problem(3, 3, 21, n_samples=60)
    res = run_lshaped(p, gap=1e-9)
    objs = [r["master_objective"] for r in res.log]
    assert all(b >= a - 1e-7 * max(1, abs(a)) for a, b in zip(objs, objs[1:]))
    path = tmp_path / "log.csv"
    res.write_log(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["iteration", "master_objective", "cuts_added", "wall_time"]
    assert len(rows) == res.iterations + 1


def test_incumbent_is_reprised_feasible_point():
    p = random_teaming_problem(2, 3, 31, n_samples=40)
    state = new_master(p)
    m = solve_master(state)
    x, value = evaluate_master_point(state, m.x)
    assert state.formulation.instance.is_feasible(x)
    assert value >= m.objective - 1e-9


def test_iteration_cap_reports_not_converged():
    p = random_teaming_problem(3, 3, 21, n_samples=60)
    res = run_lshaped(p, gap=1e-12, max_iterations=1)
    assert res.iterations == 1
    if not res.converged:
        assert res.status == "not_converged" and res.x is not None


def test_wall_time_roughly_linear_in_samples():
    p = random_teaming_problem(2, 2, 8, n_samples=100)
    times = {}
    for n in (100, 200, 400, 800):
        sc = draw_scenarios(p, n=n)
        t0 = time.perf_counter()
        run_lshaped(p, sc)
        times[n] = time.perf_counter() - t0
    slope = np.polyfit(np.log(list(times)), np.log(list(times.values())), 1)[0]
    assert slope < 1.5

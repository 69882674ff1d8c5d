import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctas.flows import (
    FlowError,
    FlowNetwork,
    NonIntegralVertex,
    check_total_unimodularity,
    cover_flow,
    cover_flow_individual,
    from_dot,
    incidence_matrix,
    is_route,
    is_totally_unimodular,
    round_flow,
    routes_from_json,
    routes_to_json,
    snap_ceil,
    to_dot,
    validate_flow,
)
from ctas.model import END, START
from ctas.scenario import random_flow_network
from oracles import brute_cover, brute_round, det_submatrices_ok

S, U = START, END


def net(edges):
    return FlowNetwork({(u, v): f for u, v, f, _ in edges}, {(u, v): b for u, v, _, b in edges})


# the three-route example: a max of 20 is reachable, {20, 24, 16} is the trap
THREE_ROUTES = net([
    (S, "m1", 1, 6), ("m1", "m3", 1, 6), (S, "m2", 1, 4), ("m2", "m3", 1, 4),
    ("m3", "m4", 1, 4), ("m4", U, 1, 4), ("m3", "m5", 1, 6), ("m5", U, 1, 6),
    (S, "m6", 1, 10), ("m6", U, 1, 10),
])


def test_validate_conserved():
    assert validate_flow(random_flow_network(6, 3.0, 1)).ok


def test_validate_perturbation_reports_two_nodes():
    n = net([(S, "a", 1, 1), ("a", "b", 1, 1), ("b", U, 1, 1)])
    n.flows[("a", "b")] += 1
    assert set(validate_flow(n).residuals) == {"a", "b"}


def test_validate_cycle():
    n = net([(S, "a", 1, 1), ("a", U, 1, 1), ("a", "b", 1, 1), ("b", "c", 1, 1), ("c", "a", 1, 1)])
    report = validate_flow(n)
    assert report.residuals == {} and sorted(report.cycles[0]) == ["a", "b", "c"]


def test_validate_negative():
    n = net([(S, "a", -1, 1), ("a", U, -1, 1)])
    assert validate_flow(n).negative


@pytest.mark.parametrize("value,expected", [(3.0000001, 3), (2.9999999, 3), (3.2, 4), (0.0, 0)])
def test_snap_ceil(value, expected):
    assert snap_ceil(value) == expected


def test_round_integral_unchanged():
    n = random_flow_network(6, 1.0, 3, integral=True)
    assert round_flow(n).flows == n.flows


def test_round_13_41_goes_to_15():
    n = net([(S, "m", 13.41, 1), ("m", "a", 4.47, 1), ("m", "b", 4.47, 1), ("m", "c", 4.47, 1),
             ("a", U, 4.47, 1), ("b", U, 4.47, 1), ("c", U, 4.47, 1)])
    assert round_flow(n).flows[(S, "m")] == 15


def test_round_half_flows():
    n = net([(S, "a", 0.5, 1), (S, "b", 0.5, 1), ("a", "c", 0.5, 1), ("b", "c", 0.5, 1), ("c", U, 1.0, 1)])
    r = round_flow(n)
    assert r.flows[("c", U)] == 2
    assert r.energy() == brute_round(n.flows, n.costs, S, U)


def test_round_zero_edges_stay_zero():
    n = random_flow_network(8, 2.0, 5, spare_edges=0.5)
    r = round_flow(n)
    for e, f in n.flows.items():
        if f == 0:
            assert r.flows[e] == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 7), st.floats(0.2, 2.5), st.integers(0, 10**6))
def test_round_properties(n_nodes, max_flow, seed):
    n = random_flow_network(n_nodes, max_flow, seed)
    r = round_flow(n)
    vals = np.array(list(r.flows.values()))
    assert np.all(vals == np.round(vals))
    assert validate_flow(r).ok
    assert all(r.flows[e] >= snap_ceil(n.flows[e]) for e in n.positive_edges())
    assert r.energy() >= n.energy() - 1e-9


def test_cover_single_path():
    n = net([(S, "a", 1, 2), ("a", U, 1, 3)])
    res = cover_flow(n)
    assert [r.nodes for r in res.routes] == [(S, "a", U)] and res.max_energy == 5


def test_cover_three_route_example():
    res = cover_flow(THREE_ROUTES)
    assert res.max_energy == pytest.approx(20)
    assert sorted(r.energy for r in res.routes) == [20, 20, 20]
    assert brute_cover(THREE_ROUTES.flows, THREE_ROUTES.costs, S, U) == 20


def check_cover(n, routes):
    summed = {}
    for r in routes:
        assert is_route(r.nodes, n)
        for e in r.edges:
            summed[e] = summed.get(e, 0) + 1
    assert all(summed.get(e, 0) == int(round(f)) for e, f in n.flows.items())
    assert len(routes) == round(n.total_flow())


@pytest.mark.parametrize("seed", range(15))
def test_cover_matches_enumeration(seed):
    n = random_flow_network(5, 1.0, seed, integral=True, n_paths=4)
    res = cover_flow(n)
    check_cover(n, res.routes)
    assert res.max_energy == pytest.approx(brute_cover(n.flows, n.costs, S, U))
    ind = cover_flow_individual(n)
    check_cover(n, ind.routes)
    assert ind.max_energy == pytest.approx(res.max_energy)


def test_cover_rejects_fractional_and_cycles():
    with pytest.raises(FlowError):
        cover_flow(net([(S, "a", 0.5, 1), ("a", U, 0.5, 1)]))
    cyc = net([(S, "a", 1, 1), ("a", U, 1, 1), ("a", "b", 1, 1), ("b", "a", 1, 1)])
    with pytest.raises(FlowError):
        cover_flow(cyc)


def test_cover_capacity_warning(caplog):
    n = net([(S, "a", 1, 2), ("a", U, 1, 3)])
    with caplog.at_level("WARNING"):
        cover_flow(n, capacity=4.0)
    assert "capacity" in caplog.text


def test_tu_examples():
    path = net([(S, U, 1, 1)])
    assert check_total_unimodularity(path)
    diamond = net([(S, "m1", 1, 1), (S, "m2", 1, 1), ("m1", "m2", 1, 1), ("m1", U, 1, 1), ("m2", U, 1, 1),
               ("m2", "m3", 1, 1), ("m3", U, 1, 1)])
    A = incidence_matrix(diamond)
    assert check_total_unimodularity(diamond) and det_submatrices_ok(A, 8)
    bad = A.copy()
    bad[0, 0] = 2
    assert not is_totally_unimodular(bad) and not det_submatrices_ok(bad, 8)
    with pytest.raises(ValueError):
        is_totally_unimodular(A, max_dim=9)


def test_dot_and_json_round_trip():
    res = cover_flow(THREE_ROUTES)
    text = to_dot(THREE_ROUTES, res.routes, name="k")
    assert '"start" -> "m1" [label="1/6"]' in text
    back = from_dot(text)
    assert len(back) == 1 and back[0].flows == THREE_ROUTES.flows and back[0].species == "k"
    assert routes_from_json(routes_to_json(res.routes)) == res.routes
    assert FlowNetwork.from_dict(THREE_ROUTES.to_dict()).flows == THREE_ROUTES.flows


def test_non_integral_vertex_is_an_error_type():
    assert issubclass(NonIntegralVertex, FlowError)

from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wdrmpc.datasets import case3, case38, case94
from wdrmpc.grid import (Bus, ChargingStation, GeneratorSpec, Line, NetworkError, RadialNetwork,
                         ResUnit, build_path_matrix, lindistflow_voltage, load_network,
                         power_balance_residual, save_network, validate_radial, voltage_sensitivity)


def tree(parents, r=0.01, x=0.005, horizon=2, gens=(), res=(), stations=(), base=1.0):
    n = len(parents)
    buses = tuple(Bus(k + 1, parents[k], np.zeros(horizon), np.zeros(horizon)) for k in range(n))
    r = np.broadcast_to(r, (n - 1,))
    x = np.broadcast_to(x, (n - 1,))
    lines = tuple(Line(k, float(r[k - 2]), float(x[k - 2])) for k in range(2, n + 1))
    return RadialNetwork(buses, lines, tuple(gens), tuple(res), tuple(stations),
                         v_min=np.full(n, 0.9), v_max=np.full(n, 1.1), base_mva=base)


def test_chain_is_valid():
    assert validate_radial(tree([None, 1, 2])) == []
    assert validate_radial(case3()) == []
    assert validate_radial(case38()) == []
    assert validate_radial(case94()) == []


def test_cycle_is_reported():
    net = tree([None, 3, 2])
    problems = validate_radial(net)
    assert any("cycle" in p for p in problems)
    with pytest.raises(NetworkError):
        build_path_matrix(net)


def test_dangling_generator_is_reported():
    net = tree([None, 1, 2], gens=[GeneratorSpec(99, 0.0, 1.0, -1.0, 1.0)])
    assert any("99" in p for p in validate_radial(net))


def test_bad_bounds_and_lengths_are_reported():
    net = tree([None, 1], gens=[GeneratorSpec(2, 2.0, 1.0, -1.0, 1.0)])
    assert validate_radial(net)
    net = tree([None, 1], res=[ResUnit(2, np.zeros(5), (-0.1, 0.1))])
    assert any("length" in p or "horizon" in p for p in validate_radial(net))
    net = tree([None, 1], res=[ResUnit(2, np.zeros(2), (0.1, 0.2))])
    assert validate_radial(net)


def test_root_must_be_bus_one():
    net = tree([2, None, 2])
    assert validate_radial(net)


def test_path_matrix_chain_and_star():
    assert np.array_equal(build_path_matrix(tree([None, 1, 2])), [[0, 1, 1], [0, 0, 1]])
    assert np.array_equal(build_path_matrix(tree([None, 1, 1])), [[0, 1, 0], [0, 0, 1]])


@pytest.mark.parametrize("n", range(2, 11))
def test_chain_path_matrix_upper_triangular(n):
    B = build_path_matrix(tree([None] + list(range(1, n))))
    assert np.array_equal(B[:, 1:], np.triu(np.ones((n - 1, n - 1))))
    assert not B[:, 0].any()


def test_path_matrix_columns_count_depth():
    net = case38()
    B = net.path_matrix
    depth = np.zeros(net.n_bus, int)
    for k in net.topological_order[1:]:
        depth[k - 1] = depth[net.parent_index[k - 1]] + 1
    assert np.array_equal(B.sum(axis=0), depth)


def test_lindistflow_single_line():
    net = tree([None, 1], r=0.05, x=0.02)
    assert lindistflow_voltage(net, [1.0], [0.5], 1.0)[1] == pytest.approx(0.94)


def test_lindistflow_zero_flow_and_missing_entry():
    net = tree([None, 1, 1, 2])
    assert np.allclose(lindistflow_voltage(net, np.zeros(3), np.zeros(3), 1.02), 1.02)
    with pytest.raises(KeyError):
        lindistflow_voltage(net, {2: 0.1, 3: 0.2}, {2: 0, 3: 0, 4: 0}, 1.0)


def test_lindistflow_matches_matrix_form(rng):
    net = tree([None, 1, 2, 2, 1], r=rng.uniform(0.01, 0.1, 4), x=rng.uniform(0.01, 0.1, 4))
    P, Q = rng.normal(size=4), rng.normal(size=4)
    B = net.path_matrix
    expect = 1.0 - B.T @ (net.line_r() * P + net.line_x() * Q) / net.v0
    assert np.allclose(lindistflow_voltage(net, P, Q, 1.0), expect, atol=1e-12)


def test_voltage_sensitivity_two_bus():
    net = tree([None, 1], r=0.2)
    # M = B^T R B = [[0, 0], [0, 0.2]], all participation at the root
    mu = voltage_sensitivity(net, [1.0, 0.0], 2)
    assert mu == pytest.approx([0.0, 0.2])
    mu = voltage_sensitivity(net, [0.0, 1.0], 2)
    assert mu == pytest.approx([-0.2, 0.0])


def test_voltage_sensitivity_zero_resistance_and_bad_alpha():
    net = tree([None, 1, 2], r=0.0)
    assert np.allclose(voltage_sensitivity(net, [0.5, 0.5, 0.0], 3), 0.0)
    with pytest.raises(ValueError):
        voltage_sensitivity(net, [0.5, 0.6, 0.0], 3)
    with pytest.raises(ValueError):
        voltage_sensitivity(net, [1.5, -0.5, 0.0], 3)


def test_voltage_sensitivity_finite_difference(rng):
    net = tree([None, 1, 2, 2, 4], r=rng.uniform(0.01, 0.1, 4))
    alpha = rng.dirichlet(np.ones(5))
    M = net.voltage_matrix
    for k in range(2, 6):
        mu = voltage_sensitivity(net, alpha, k)
        for j in range(5):
            xi = np.zeros(5)
            xi[j] = 1e-3
            dv = M @ (xi - alpha * xi.sum())
            assert abs(dv[k - 1] - mu[j] * 1e-3) <= 1e-9


def test_voltage_identity_against_recursion(rng):
    # perturbed injections change flows by B(xi - alpha sum xi); the recursion must agree
    net = tree([None, 1, 2, 2, 4, 1], r=rng.uniform(0.01, 0.1, 5), x=rng.uniform(0.01, 0.1, 5))
    B = net.path_matrix
    P0, Q0 = rng.normal(size=5), rng.normal(size=5)
    V0 = lindistflow_voltage(net, P0, Q0, 1.0)
    for _ in range(20):
        alpha = rng.dirichlet(np.ones(6))
        xi = rng.normal(size=6)
        dP = -B @ (xi - alpha * xi.sum())
        V = lindistflow_voltage(net, P0 + dP, Q0, 1.0)
        assert np.allclose(V - V0, net.voltage_matrix @ (xi - alpha * xi.sum()), atol=1e-9)


def _balanced_two_bus():
    net = tree([None, 1], gens=[GeneratorSpec(1, 0, 5, -5, 5), GeneratorSpec(2, 0, 1, -1, 1)])
    buses = (net.buses[0], Bus(2, 1, np.full(2, 0.5), np.full(2, 0.2)))
    from dataclasses import replace
    net = replace(net, buses=buses)
    action = SimpleNamespace(p_gen=np.array([0.3, 0.2]), q_gen=np.array([0.2, 0.0]),
                             p_cs=np.zeros(2), p_res=np.zeros(2),
                             line_p=np.array([0.3]), line_q=np.array([0.2]))
    return net, action


def test_power_balance_two_bus():
    net, action = _balanced_two_bus()
    p, q = power_balance_residual(net, action, 0)
    assert np.allclose(p, 0.0) and np.allclose(q, 0.0)
    action.p_gen = action.p_gen + np.array([0.0, 0.1])
    p, _ = power_balance_residual(net, action, 0)
    assert p[1] == pytest.approx(0.1)


def test_power_balance_is_linear(rng):
    net = case3()
    parts = []
    for _ in range(2):
        parts.append(SimpleNamespace(p_gen=rng.normal(size=3), q_gen=rng.normal(size=3),
                                     p_cs=rng.normal(size=3), p_res=rng.normal(size=3),
                                     line_p=rng.normal(size=2), line_q=rng.normal(size=2)))
    total = SimpleNamespace(**{k: getattr(parts[0], k) + getattr(parts[1], k)
                               for k in vars(parts[0])})
    zero = SimpleNamespace(**{k: 0.0 * v for k, v in vars(parts[0]).items()})
    r0 = np.array(power_balance_residual(net, zero, 3))
    ra = np.array(power_balance_residual(net, parts[0], 3)) - r0
    rb = np.array(power_balance_residual(net, parts[1], 3)) - r0
    rt = np.array(power_balance_residual(net, total, 3)) - r0
    assert np.allclose(rt, ra + rb)


def test_generator_cost_is_convex_piecewise_linear():
    g = GeneratorSpec(1, 0.0, 4.0, -1.0, 1.0, ((0.0, 10.0), (1.0, 20.0), (3.0, 40.0)))
    assert g.cost(0.0) == pytest.approx(0.0)
    assert g.cost(1.0) == pytest.approx(10.0)
    assert g.cost(2.0) == pytest.approx(30.0)
    assert g.cost(4.0) == pytest.approx(10.0 + 40.0 + 40.0)
    p = np.linspace(0, 4, 41)
    assert np.all(np.diff(g.cost(p), 2) >= -1e-9)
    bad = GeneratorSpec(1, 0.0, 4.0, -1.0, 1.0, ((0.0, 20.0), (1.0, 10.0)))
    assert any("convex" in p for p in validate_radial(tree([None, 1], gens=[bad])))


def test_station_validation_and_degradation():
    st = case3().stations[0]
    assert st.degradation_rate == pytest.approx(22.5)
    assert st.initial_soc == pytest.approx(0.15)
    for bad in (ChargingStation(2, 0.3, 0.1, 0.1, 0.1, np.zeros(2)),
                ChargingStation(2, 0.0, 0.3, 0.0, 0.1, np.zeros(2)),
                ChargingStation(2, 0.0, 0.3, 0.1, 0.1, np.zeros(2), eta_end=1.5)):
        assert validate_radial(tree([None, 1], stations=[bad]))


def test_network_round_trip(tmp_path):
    net = case38()
    save_network(net, tmp_path / "n.json")
    back = load_network(tmp_path / "n.json")
    assert back.n_bus == net.n_bus
    assert np.array_equal(back.path_matrix, net.path_matrix)
    assert np.allclose(back.voltage_matrix, net.voltage_matrix)
    assert [g.cost_pieces for g in back.generators] == [g.cost_pieces for g in net.generators]
    assert np.allclose(back.stations[0].demand_forecast, net.stations[0].demand_forecast)


def test_with_stations_moves_template():
    net = case94(stations=(2,))
    moved = net.with_stations((6, 10, 12))
    assert [s.bus for s in moved.stations] == [6, 10, 12]
    assert moved.has_station(10) and not moved.has_station(2)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=14))
def test_random_trees_have_depth_columns(keys):
    parents = [None] + [1 + keys[i] % (i + 1) for i in range(len(keys))]
    net = tree(parents)
    B = build_path_matrix(net)
    assert B.shape == (len(parents) - 1, len(parents))
    # a line lies on the path to its own child bus
    assert np.all(np.diag(B[:, 1:]) == 1)

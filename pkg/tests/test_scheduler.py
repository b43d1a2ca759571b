from dataclasses import replace

import numpy as np
import pytest

from wdrmpc.datasets import case3, res_samples_for
from wdrmpc.grid import (Bus, ChargingStation, GeneratorSpec, RadialNetwork,
                         power_balance_residual)
from wdrmpc.lp import LinearProgram, solve
from wdrmpc.scheduler import (InfeasibleWindow, RiskWeights, build_stage2_problem,
                              degradation_cost_terms, solve_receding_horizon)
from wdrmpc.tube import AmbiguityTube, ClosedLoopSystem, TightenedSets, assemble_tube


def single_bus(load=0.4, horizon=24, stations=(), price=None):
    gen = GeneratorSpec(1, 0.0, 2.0, -1.0, 1.0, ((0.0, 20.0), (0.3, 35.0), (0.6, 80.0)))
    bus = Bus(1, None, np.full(horizon, load), np.full(horizon, 0.1))
    return RadialNetwork((bus,), (), (gen,), (), tuple(stations), v_min=np.array([0.9]),
                         v_max=np.array([1.1]), charging_price=price)


@pytest.fixture(scope="module")
def res3():
    net = case3()
    return res_samples_for(net, 30, seed=11)


def test_weights_validation():
    with pytest.raises(ValueError):
        RiskWeights(beta=1.0)
    with pytest.raises(ValueError):
        RiskWeights(mu1=-1.0)


def test_degradation_arithmetic():
    st = ChargingStation(1, 0.0, 0.3, 0.1, 0.1, np.zeros(2), battery_cost=45_000.0, eta_end=0.8,
                         b1=1e-4, b2=0.0)
    lp = LinearProgram()
    cols = lp.add_vars("pb", 4, lo=[0.5, -0.5, 1.0, 0.0], hi=[0.5, -0.5, 1.0, 0.0])
    expr = degradation_cost_terms(lp, st, cols)
    sol = solve(lp)
    assert expr.value(sol.x) == pytest.approx(45.0)
    assert sol.objective == pytest.approx(45.0)
    with pytest.raises(ValueError):
        degradation_cost_terms(lp, replace(st, eta_end=1.0), cols)


def test_degradation_zero_and_random(rng):
    st = ChargingStation(1, 0.0, 0.3, 0.1, 0.1, np.zeros(2))
    for values in (np.zeros(5), rng.uniform(-0.1, 0.1, 12)):
        lp = LinearProgram()
        cols = lp.add_vars("pb", values.size, lo=values, hi=values)
        expr = degradation_cost_terms(lp, st, cols)
        sol = solve(lp)
        assert expr.value(sol.x) == pytest.approx(st.degradation_rate * np.abs(values).sum(), abs=1e-9)


def test_single_bus_economic_dispatch():
    net = single_bus(load=0.5)
    prob = build_stage2_problem(net, None, None, RiskWeights(), 0, 1)
    sol = solve(prob.lp)
    assert sol.objective == pytest.approx(float(net.generators[0].cost(0.5)))
    assert prob.action(sol).p_gen[0] == pytest.approx(0.5)


def test_zero_weights_leave_pure_cost(res3):
    net = case3()
    prob = build_stage2_problem(net, None, res3, RiskWeights(mu1=0.0, mu2=0.0, epsilon=0.3), 0, 6)
    sol = solve(prob.lp)
    assert sol.objective == pytest.approx(prob.cost(sol), abs=1e-9)


def test_accelerated_above_exact_on_three_bus(res3):
    net = case3()
    res = res3.head(10)
    out = {}
    for method in ("accelerated", "exact"):
        prob = build_stage2_problem(net, None, res, RiskWeights(epsilon=0.01), 0, 6, method=method)
        sol = solve(prob.lp)
        assert sol.ok
        names = [prob.lp.row_name(i) for i in range(prob.lp.row_count)]
        out[method] = (sol.objective, [n for n in names if n.startswith("bal_")])
    assert out["accelerated"][0] >= out["exact"][0] - 1e-8
    assert out["accelerated"][1] == out["exact"][1]


def test_zero_radius_matches_saa_form(res3):
    net = case3()
    vals = [solve(build_stage2_problem(net, None, res3, RiskWeights(epsilon=0.0), 0, 6,
                                       method=m).lp).objective for m in ("accelerated", "exact")]
    assert vals[0] == pytest.approx(vals[1], abs=1e-9)


def test_cost_share_is_monotone_in_mu1(res3):
    net = case3()
    costs = []
    for mu1 in (0.0, 0.5, 5.0, 50.0):
        prob = build_stage2_problem(net, None, res3, RiskWeights(mu1=mu1), 0, 6)
        sol = solve(prob.lp)
        costs.append(prob.cost(sol))
    assert np.all(np.diff(costs) >= -1e-7)


def test_physics_of_every_slot(res3):
    net = case3()
    prob = build_stage2_problem(net, None, res3, RiskWeights(), 0, 12)
    sol = solve(prob.lp)
    B = net.path_matrix
    for tau in range(prob.window):
        a = prob.action(sol, tau)
        p, q = power_balance_residual(net, a, a.t)
        assert max(np.abs(p).max(), np.abs(q).max()) <= 1e-6
        assert a.gen_alpha.sum() == pytest.approx(1.0, abs=1e-12)
        scale = net.v0 * net.base_mva
        v_matrix = net.v0 - B.T @ (net.line_r() * a.line_p + net.line_x() * a.line_q) / scale
        assert np.max(np.abs(a.voltage - v_matrix)) <= 1e-9


def test_window_truncated_at_horizon():
    net = case3()
    prob = build_stage2_problem(net, None, None, RiskWeights(), 20, 12)
    assert prob.slots == [20, 21, 22, 23]
    with pytest.raises(ValueError):
        build_stage2_problem(net, None, None, RiskWeights(), 24, 12)
    with pytest.raises(ValueError):
        build_stage2_problem(net, None, None, RiskWeights(), 0, 4, method="bogus")


def test_mismatched_res_buses(res3):
    net = case3()
    wrong = replace(res3, buses=(2,))
    with pytest.raises(ValueError):
        build_stage2_problem(net, None, wrong, RiskWeights(), 0, 4)


def test_stationary_single_bus_commits_identical_actions():
    st = ChargingStation(1, 0.0, 0.3, 0.1, 0.1, np.full(48, 0.02), soc_init=0.0)
    net = single_bus(horizon=48, stations=[st], price=np.full(48, 50.0))
    sched = solve_receding_horizon(net, None, None, RiskWeights(), window=6, iterations=6)
    first = sched.actions[0]
    for a in sched.actions[1:]:
        assert np.allclose(a.p_gen, first.p_gen) and np.allclose(a.p_b, first.p_b)


def test_single_iteration_equals_open_loop(res3):
    net = case3()
    sched = solve_receding_horizon(net, res3, None, RiskWeights(), window=8, iterations=1)
    prob = build_stage2_problem(net, None, res3, RiskWeights(), 0, 8)
    sol = solve(prob.lp)
    assert sched.objectives[0] == pytest.approx(sol.objective)
    assert np.allclose(sched.actions[0].p_b, prob.action(sol).p_b, atol=1e-9)


def test_first_slot_principle_and_recursions(res3):
    net = case3()
    system = ClosedLoopSystem.integrator(1, 0.5)
    tube = AmbiguityTube(np.full((25, 1), -0.005), np.full((25, 1), 0.005))
    st = net.stations[0]
    sets = assemble_tube(system, tube, (st.soc_min, st.soc_max), (-st.p_dch_max, st.p_ch_max))
    w = np.random.default_rng(0).uniform(-0.004, 0.004, (4, 1))
    sched = solve_receding_horizon(net, res3, sets, RiskWeights(), window=6, iterations=4,
                                   system=system, realized=w)
    for i, act in enumerate(sched.actions):
        prob = build_stage2_problem(net, sets, res3, RiskWeights(), i, 6, soc0=sched.nominal_soc[i])
        sol = solve(prob.lp)
        assert np.allclose(prob.action(sol).p_b, act.p_b, atol=1e-8)
        assert sets.v_lo[i, 0] - 1e-9 <= act.p_b[0] <= sets.v_hi[i, 0] + 1e-9
    x, z = sched.realized_soc, sched.nominal_soc
    assert np.allclose(z[1:], z[:-1] + sched.nominal_input)
    assert np.allclose(x[1:], x[:-1] + sched.realized_input + w)
    assert np.allclose(sched.realized_input, sched.nominal_input + sched.k_gain * (x[:-1] - z[:-1]))
    assert sched.clamp_events == 0


def test_realized_state_is_clamped_and_counted():
    net = case3()
    sched = solve_receding_horizon(net, None, None, RiskWeights(), window=4, iterations=2,
                                   realized=np.array([[1.0], [-5.0]]))
    assert sched.clamp_events == 2
    st = net.stations[0]
    assert np.all(sched.realized_soc >= st.soc_min) and np.all(sched.realized_soc <= st.soc_max)


def test_infeasible_window_reported():
    net = single_bus(load=5.0)
    with pytest.raises(InfeasibleWindow) as info:
        solve_receding_horizon(net, None, None, RiskWeights(), window=2, iterations=1)
    assert info.value.t0 == 0


def test_cost_breakdown_adds_up(res3):
    net = case3()
    sched = solve_receding_horizon(net, res3, None, RiskWeights(), window=4, iterations=3)
    c = sched.costs
    assert c["total"] == pytest.approx(c["generation"] + c["charging"] + c["degradation"])
    assert sched.objective == pytest.approx(np.mean(sched.objectives))

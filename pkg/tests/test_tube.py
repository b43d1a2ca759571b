import numpy as np
import pytest

from wdrmpc.lp import solve
from wdrmpc.tube import (AmbiguityTube, ClosedLoopSystem, EmptyTightenedSet, assemble_tube,
                         design_feedback_gain, error_support, pontryagin_tighten,
                         propagate_error_samples, quantile_tube, stage1_tube_bounds, tube_slot_lp,
                         write_tube_csv)
from wdrmpc.uncertainty import generate_disturbances


def test_feedback_gain():
    assert design_feedback_gain(0.5) == pytest.approx([-0.5])
    sys0 = ClosedLoopSystem.integrator(2, 0.0)
    assert np.allclose(sys0.closed_loop, 0.0)
    with pytest.raises(ValueError):
        design_feedback_gain(1.0)
    with pytest.raises(ValueError):
        design_feedback_gain(-0.1)
    with pytest.raises(ValueError):
        ClosedLoopSystem([1.0], [1.0], [0.5])


def test_error_recursion_constant_disturbance():
    sys = ClosedLoopSystem.integrator(1, 0.5)
    e = propagate_error_samples(sys, np.full((1, 3), 0.1))
    assert e[0, :, 0] == pytest.approx([0.0, 0.1, 0.15, 0.175])
    assert not propagate_error_samples(sys, np.zeros((4, 5))).any()
    with pytest.raises(ValueError):
        propagate_error_samples(sys, np.zeros((2, 3, 2)))


def test_error_recursion_closed_form(rng):
    rho = 0.7
    sys = ClosedLoopSystem.integrator(1, rho)
    w = rng.normal(size=(20, 12))
    e = propagate_error_samples(sys, w)[:, :, 0]
    for t in range(1, 13):
        closed = sum(rho ** (t - 1 - j) * w[:, j] for j in range(t))
        assert np.max(np.abs(e[:, t] - closed)) <= 1e-12


def test_error_support_contains_samples_and_deadbeat_settles():
    sys = ClosedLoopSystem.integrator(1, 0.5)
    w = generate_disturbances(np.ones(10), 0.2, 300, seed=1)
    lo, hi = error_support(sys, w.support_lo, w.support_hi)
    e = propagate_error_samples(sys, w)
    assert np.all(e >= lo - 1e-12) and np.all(e <= hi + 1e-12)
    lo0, hi0 = error_support(ClosedLoopSystem.integrator(1, 0.0), w.support_lo, w.support_hi)
    assert np.allclose(lo0[1:], lo0[1]) and np.allclose(hi0[1:], hi0[1])


def test_degenerate_samples_give_point_tube():
    lp, a_lo, a_hi = tube_slot_lp(np.full(30, 0.07), [-1.0], [1.0], 0.0, 1e3, 0.95)
    sol = solve(lp)
    assert sol.x[a_lo] == pytest.approx(0.07) and sol.x[a_hi] == pytest.approx(0.07)
    assert sol.objective == pytest.approx(0.0, abs=1e-9)


def test_small_mu_collapses_tube(rng):
    e = rng.uniform(-0.2, 0.2, (200, 3, 1))
    tube = stage1_tube_bounds(e, np.full((3, 1), -0.2), np.full((3, 1), 0.2), mu=1e-4)
    assert np.allclose(tube.width(), 0.0)


def test_uniform_samples_cover_inner_quantile_and_exact_is_below(rng):
    e = rng.uniform(-0.2, 0.2, 500)
    beta = 0.95
    qlo, qhi = np.quantile(e, [(1 - beta) / 2, (1 + beta) / 2])
    tube = stage1_tube_bounds(e[:, None, None], np.full((1, 1), -0.2), np.full((1, 1), 0.2),
                              epsilon=1e-3, mu=1e3, beta=beta)
    assert tube.lo[0, 0] <= qlo and tube.hi[0, 0] >= qhi
    values = {}
    for method in ("accelerated", "exact"):
        lp, _, _ = tube_slot_lp(e, [-0.2], [0.2], 1e-3, 1e3, beta, method)
        values[method] = solve(lp).objective
    assert values["accelerated"] >= values["exact"] - 1e-8


def test_width_is_monotone_in_mu(rng):
    e = rng.normal(0, 0.05, (300, 4, 2))
    lo, hi = np.full((4, 2), -0.3), np.full((4, 2), 0.3)
    widths = [stage1_tube_bounds(e, lo, hi, mu=mu).width().sum() for mu in (1e-3, 0.05, 1.0, 1e3)]
    assert np.all(np.diff(widths) >= -1e-9)


def test_quantile_tube():
    e = np.linspace(-1, 1, 101)[:, None, None]
    tube = quantile_tube(e, 0.9)
    assert tube.lo[0, 0] == pytest.approx(-0.9) and tube.hi[0, 0] == pytest.approx(0.9)


def test_pontryagin_examples():
    assert pontryagin_tighten((0.0, 0.3), (-0.05, 0.08)) == pytest.approx((0.05, 0.22))
    assert pontryagin_tighten((0.0, 0.3), (0.0, 0.0)) == pytest.approx((0.0, 0.3))
    got = pontryagin_tighten((-0.1, 0.1), (-0.1, 0.2), gain=-0.5)
    assert got == pytest.approx((0.0, 0.05))
    with pytest.raises(EmptyTightenedSet):
        pontryagin_tighten((0.0, 0.1), (-0.2, 0.2))


def test_pontryagin_membership_on_grid():
    # every v in U minus KS keeps v + K s inside U for every s in S
    k, s_lo, s_hi = -0.5, -0.1, 0.2
    lo, hi = pontryagin_tighten((-0.1, 0.1), (s_lo, s_hi), gain=k)
    grid = np.round(np.arange(-0.1, 0.1 + 1e-9, 1e-3), 12)
    s = np.linspace(s_lo, s_hi, 31)
    ok = [bool(np.all(np.abs(v + k * s) <= 0.1 + 1e-12)) for v in grid]
    members = grid[np.array(ok)]
    assert members.min() == pytest.approx(lo, abs=1e-9)
    assert members.max() == pytest.approx(hi, abs=1e-9)


def test_assemble_zero_tube_and_empty_set(tmp_path):
    sys = ClosedLoopSystem.integrator(1, 0.5)
    sets = assemble_tube(sys, AmbiguityTube.zero(5), (0.0, 0.3), (-0.1, 0.1))
    assert np.allclose(sets.z_lo, 0.0) and np.allclose(sets.z_hi, 0.3)
    assert np.allclose(sets.v_lo, -0.1) and np.allclose(sets.v_hi, 0.1)
    wide = AmbiguityTube(np.full((3, 1), -0.2), np.full((3, 1), 0.2))
    with pytest.raises(EmptyTightenedSet) as info:
        assemble_tube(sys, wide, (0.0, 0.3), (-0.1, 0.1))
    assert info.value.slot == 0 and info.value.dim == 0
    write_tube_csv(AmbiguityTube.zero(5), sets, tmp_path / "tube.csv")
    lines = (tmp_path / "tube.csv").read_text().splitlines()
    assert lines[0] == "t,dim,alpha_lo,alpha_hi,z_lo,z_hi,v_lo,v_hi" and len(lines) == 6


def test_full_scale_sets_are_nonempty_and_nested():
    demand = 0.05 * np.ones(12)
    w = generate_disturbances(demand, 0.2, 500, seed=4)
    sys = ClosedLoopSystem.integrator(1, 0.5)
    e = propagate_error_samples(sys, w)
    lo, hi = error_support(sys, w.support_lo, w.support_hi)
    tube = stage1_tube_bounds(e, lo, hi)
    sets = assemble_tube(sys, tube, (0.0, 0.3), (-0.1, 0.1))
    assert np.all(sets.z_lo >= 0.0) and np.all(sets.z_hi <= 0.3)
    assert np.all(sets.v_lo >= -0.1) and np.all(sets.v_hi <= 0.1)
    assert np.all(sets.z_hi > sets.z_lo) and np.all(sets.v_hi > sets.v_lo)
    assert tube.lo[0, 0] == tube.hi[0, 0] == 0.0


def test_tube_contains():
    tube = AmbiguityTube(np.full((3, 1), -1.0), np.full((3, 1), 1.0))
    e = np.zeros((2, 3, 1))
    e[1, 2, 0] = 1.5
    assert list(tube.contains(e)) == [True, False]
    with pytest.raises(ValueError):
        AmbiguityTube(np.ones((2, 1)), np.zeros((2, 1)))

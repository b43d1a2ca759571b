import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wdrmpc.lp import (INF, LinearProgram, LinExpr, SolverError, Status, add_abs_epigraph,
                       add_hinge, add_hinge_block, add_max_epigraph, duality_gap, primal_residual,
                       solve)
from wdrmpc.validation import random_lp


def test_min_x_above_two():
    lp = LinearProgram()
    x = lp.add_var("x", lo=-INF, obj=1.0)
    lp.add_constraint(LinExpr.var(x), ">=", 2.0)
    sol = solve(lp)
    assert sol.ok
    assert sol.objective == pytest.approx(2.0)


def test_infeasible_is_a_status():
    lp = LinearProgram()
    x = lp.add_var("x", lo=-INF, obj=1.0)
    lp.add_constraint(LinExpr.var(x), "<=", 0.0)
    lp.add_constraint(LinExpr.var(x), ">=", 1.0)
    assert solve(lp).status is Status.INFEASIBLE
    assert solve(lp, "simplex").status is Status.INFEASIBLE


def test_unbounded_is_a_status():
    lp = LinearProgram()
    lp.add_var("x", lo=-INF, obj=1.0)
    assert solve(lp).status is Status.UNBOUNDED
    assert solve(lp, "simplex").status is Status.UNBOUNDED


def test_malformed_rows_raise():
    lp = LinearProgram()
    lp.add_var("x")
    with pytest.raises(ValueError):
        lp.add_rows([[3]], [1.0], "<=", [1.0])
    with pytest.raises(ValueError):
        lp.add_constraint(LinExpr.var(0), "<", 1.0)
    with pytest.raises(ValueError):
        lp.add_rows([[0]], [np.nan], "<=", [1.0])
    with pytest.raises(ValueError):
        lp.add_var("x")
    with pytest.raises(ValueError):
        solve(lp, "nope")


def test_expression_algebra():
    e = 2 * LinExpr.var(0) - LinExpr.var(1) + 3
    f = 1 - e / 2
    assert f.coefs == {0: -1.0, 1: 0.5}
    assert f.const == pytest.approx(-0.5)
    assert f.value(np.array([1.0, 2.0])) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        e.value()
    assert (LinExpr.var(0) - LinExpr.var(0)).is_constant()


@pytest.mark.parametrize("value", [-3.0, 0.0, 2.5])
def test_abs_epigraph_constants(value):
    lp = LinearProgram()
    x = lp.add_var("x", lo=value, hi=value)
    t = add_abs_epigraph(lp, LinExpr.var(x))
    lp.add_objective(LinExpr.var(t))
    assert solve(lp).x[t] == pytest.approx(abs(value))


def test_max_epigraph_and_hinge():
    lp = LinearProgram()
    x = lp.add_var("x", lo=1.0, hi=1.0)
    t = add_max_epigraph(lp, [LinExpr.var(x, 2.0), LinExpr(const=-4.0), 3 - LinExpr.var(x)])
    h1 = add_hinge(lp, LinExpr(const=-1.0))
    h2 = add_hinge(lp, LinExpr(const=2.0))
    h3 = add_hinge(lp, LinExpr.var(x) - 5)
    lp.add_objective(LinExpr({t: 1.0, h1: 1.0, h2: 1.0, h3: 1.0}))
    sol = solve(lp)
    assert sol.x[[t, h1, h2, h3]] == pytest.approx([2.0, 0.0, 2.0, 0.0])
    with pytest.raises(ValueError):
        add_max_epigraph(lp, [])


def test_epigraph_rows_are_not_constraints():
    lp = LinearProgram()
    x = lp.add_var("x", lo=-1, hi=1)
    lp.add_constraint(LinExpr.var(x), "<=", 0.5)
    add_abs_epigraph(lp, LinExpr.var(x))
    assert lp.row_count == 3
    assert lp.constraint_count == 1


def test_random_affine_epigraphs_match_direct_evaluation(rng):
    for _ in range(10):
        n = 4
        x0 = rng.uniform(-2, 2, n)
        a = rng.normal(size=(3, n))
        b = rng.normal(size=3)
        lp = LinearProgram()
        xs = [lp.add_var(f"x{i}", lo=x0[i], hi=x0[i]) for i in range(n)]
        exprs = [LinExpr(dict(zip(xs, row)), c) for row, c in zip(a, b)]
        t_abs = add_abs_epigraph(lp, exprs[0])
        t_max = add_max_epigraph(lp, exprs)
        t_h = add_hinge(lp, exprs[1])
        lp.add_objective(LinExpr({t_abs: 1.0, t_max: 1.0, t_h: 1.0}))
        sol = solve(lp)
        vals = a @ x0 + b
        assert sol.x[t_abs] == pytest.approx(abs(vals[0]), abs=1e-9)
        assert sol.x[t_max] == pytest.approx(vals.max(), abs=1e-9)
        assert sol.x[t_h] == pytest.approx(max(vals[1], 0.0), abs=1e-9)


def test_hinge_block_vectorized(rng):
    lp = LinearProgram()
    x = lp.add_var("x", lo=0.5, hi=0.5)
    vals = rng.normal(size=(20, 1))
    const = rng.normal(size=20)
    t = add_hinge_block(lp, "h", np.full((20, 1), x), vals, const, obj=1.0)
    sol = solve(lp)
    assert sol.x[t] == pytest.approx(np.maximum(0.5 * vals[:, 0] + const, 0.0), abs=1e-9)


def test_twenty_random_lps_match_tableau_oracle(rng):
    for _ in range(20):
        lp = random_lp(rng, int(rng.integers(2, 51)), int(rng.integers(1, 51)))
        a, b = solve(lp), solve(lp, "simplex")
        assert a.ok and b.ok
        assert a.objective == pytest.approx(b.objective, abs=1e-7, rel=1e-9)


def test_duality_and_feasibility_contract(rng):
    for _ in range(10):
        lp = random_lp(rng, 15, 10)
        x = lp.add_vars("y", 3, lo=0.0, obj=1.0)
        lp.add_rows(x[None, :], 1.0, "==", [2.0])
        sol = solve(lp)
        assert primal_residual(lp, sol.x) <= 1e-8
        assert duality_gap(lp, sol) <= 1e-7


def test_duals_are_rhs_sensitivities():
    lp = LinearProgram()
    x = lp.add_vars("x", 2, lo=0.0, obj=[1.0, 2.0])
    r = lp.add_rows(x[None, :], [1.0, 1.0], ">=", [3.0])
    sol = solve(lp)
    assert sol.duals[r[0]] == pytest.approx(1.0)


def test_lp_text_export(tmp_path):
    lp = LinearProgram("demo")
    x = lp.add_var("x[0]", lo=-INF, obj=1.0)
    y = lp.add_var("y", lo=0.0, hi=4.0)
    lp.add_constraint(LinExpr({x: 1.0, y: -2.0}), ">=", 1.0, name="row")
    lp.write_lp(tmp_path / "demo.lp")
    text = (tmp_path / "demo.lp").read_text()
    for piece in ("Minimize", "Subject To", "row:", "x(0) free", "0 <= y <= 4", "End"):
        assert piece in text


def test_solve_is_deterministic(rng):
    lp = random_lp(rng, 30, 20)
    a, b = solve(lp, "simplex"), solve(lp, "simplex")
    assert np.array_equal(a.x, b.x)
    c, d = solve(lp), solve(lp)
    assert np.array_equal(c.x, d.x)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_lp_backends_agree(seed):
    rng = np.random.default_rng(seed)
    lp = random_lp(rng, int(rng.integers(1, 8)), int(rng.integers(1, 8)))
    a, b = solve(lp), solve(lp, "simplex")
    assert a.objective == pytest.approx(b.objective, abs=1e-7)

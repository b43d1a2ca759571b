"""Quick cross-checks of every solver route against an independent oracle.

Each check returns ``(name, passed, detail)``; the command-line ``validate``
subcommand prints them.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from .dro import (MaxAffineLoss, accelerated, brute_force_worst_case, cvar_lp, empirical_cvar,
                  exact_dual, saa_value)
from .grid import build_path_matrix, voltage_sensitivity
from .lp import LinearProgram, solve
from .uncertainty import (PointMasses, SampleSet, WassersteinBall, make_rng, wasserstein_1d)


def random_lp(rng, n: int, m: int) -> LinearProgram:
    """Feasible, bounded LP: a known interior point and box bounds on every variable."""
    lp = LinearProgram("random")
    x0 = rng.uniform(-1, 1, n)
    idx = lp.add_vars("x", n, lo=-5.0, hi=5.0, obj=rng.normal(size=n))
    A = rng.normal(size=(m, n))
    slack = rng.uniform(0.1, 1.0, m)
    lp.add_rows(np.broadcast_to(idx, (m, n)), A, "<=", A @ x0 + slack)
    return lp


def _check_simplex(rng):
    worst = 0.0
    for _ in range(5):
        lp = random_lp(rng, int(rng.integers(2, 12)), int(rng.integers(1, 12)))
        a, b = solve(lp, "highs"), solve(lp, "simplex")
        worst = max(worst, abs(a.objective - b.objective))
    return worst < 1e-7, f"max |highs - simplex| = {worst:.2e}"


def _check_duality(rng):
    lo, hi = np.array([-5.0]), np.array([5.0])
    worst = 0.0
    for _ in range(3):
        A = rng.normal(size=(3, 1))
        loss = MaxAffineLoss.from_arrays(A, rng.normal(size=3))
        pts = rng.uniform(-4, 4, (int(rng.integers(1, 6)), 1))
        ball = WassersteinBall(SampleSet(pts, lo, hi), float(rng.choice([0.01, 0.1, 0.5])))
        ex = exact_dual(loss, ball)[0].objective
        bf = brute_force_worst_case(loss, ball, 2001)
        worst = max(worst, abs(ex - bf))
    return worst < 1e-4, f"max |exact - transport| = {worst:.2e}"


def _check_upper_bound(rng):
    worst = np.inf
    for _ in range(10):
        d = int(rng.integers(1, 4))
        loss = MaxAffineLoss.from_arrays(rng.normal(size=(4, d)), rng.normal(size=4))
        ball = WassersteinBall(SampleSet(rng.uniform(-1, 1, (20, d)), -1, 1), 0.05)
        gap = accelerated(loss, ball)[0].objective - exact_dual(loss, ball)[0].objective
        worst = min(worst, gap)
    return worst >= -1e-8, f"min(accelerated - exact) = {worst:.2e}"


def _check_collapse(rng):
    loss = MaxAffineLoss.from_arrays(rng.normal(size=(3, 2)), rng.normal(size=3))
    ball = WassersteinBall(SampleSet(rng.uniform(-1, 1, (15, 2)), -1, 1), 0.0)
    s = saa_value(loss, ball.center.samples)
    e = exact_dual(loss, ball)[0].objective
    a = accelerated(loss, ball)[0].objective
    err = max(abs(s - e), abs(s - a))
    return err < 1e-10, f"max deviation from SAA = {err:.2e}"


def _check_cvar(rng):
    worst = 0.0
    for _ in range(10):
        v = rng.normal(size=int(rng.integers(1, 50)))
        beta = float(rng.uniform(0.5, 0.99))
        worst = max(worst, abs(cvar_lp(v, beta) - empirical_cvar(v, beta)))
    return worst < 1e-6, f"max |LP - direct| = {worst:.2e}"


def _check_wasserstein(rng):
    a = PointMasses(rng.normal(size=6), np.full(6, 1 / 6))
    b = PointMasses(rng.normal(size=6), np.full(6, 1 / 6))
    lp = LinearProgram("transport")
    pi = lp.add_vars("pi", (6, 6), lo=0.0, obj=np.abs(a.points[:, None] - b.points[None, :]))
    lp.add_rows(pi, 1.0, "==", a.weights)
    lp.add_rows(pi.T, 1.0, "==", b.weights)
    err = abs(solve(lp).objective - wasserstein_1d(a, b))
    return err < 1e-9, f"|quantile - transport LP| = {err:.2e}"


def _check_path_matrix(rng):
    from .datasets import case38

    net = case38()
    B = build_path_matrix(net)
    ok = True
    for j in range(1, net.n_bus + 1):
        # BFS from the root to bus j, recording the lines on the way
        prev = {1: None}
        queue = deque([1])
        while queue:
            k = queue.popleft()
            for c in net.children[k - 1]:
                prev[c] = k
                queue.append(c)
        path, k = set(), j
        while prev[k] is not None:
            path.add(k)
            k = prev[k]
        ok &= set(np.flatnonzero(B[:, j - 1]) + 2) == path
    return bool(ok), "path matrix matches BFS paths on case38"


def _check_sensitivity(rng):
    from .datasets import case38

    net = case38()
    alpha = np.zeros(net.n_bus)
    for g in net.generators:
        alpha[g.bus - 1] = rng.uniform()
    alpha /= alpha.sum()
    M = net.voltage_matrix
    k = int(rng.integers(2, net.n_bus + 1))
    mu = voltage_sensitivity(net, alpha, k)
    worst = 0.0
    for j in range(net.n_bus):
        xi = np.zeros(net.n_bus)
        xi[j] = 1e-3
        dv = M @ (xi - alpha * xi.sum())
        worst = max(worst, abs(dv[k - 1] - mu[j] * 1e-3))
    return worst < 1e-9, f"finite-difference error {worst:.2e}"


CHECKS = {
    "lp: highs vs tableau simplex": _check_simplex,
    "dro: exact dual vs transport LP": _check_duality,
    "dro: accelerated >= exact": _check_upper_bound,
    "dro: zero radius collapses to SAA": _check_collapse,
    "cvar: LP vs direct formula": _check_cvar,
    "wasserstein: quantile vs transport LP": _check_wasserstein,
    "grid: path matrix vs BFS": _check_path_matrix,
    "grid: voltage sensitivity vs finite difference": _check_sensitivity,
}


def run_checks(seed: int = 0) -> list[tuple[str, bool, str]]:
    out = []
    for name, fn in CHECKS.items():
        ok, detail = fn(make_rng([seed, len(out)]))
        out.append((name, bool(ok), detail))
    return out

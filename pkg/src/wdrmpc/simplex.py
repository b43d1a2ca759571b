"""Dense two-phase tableau simplex.

Small and slow, but entirely independent of HiGHS; the test-suite uses it as
a second implementation to cross-check the default backend.  Dantzig's
rule is used until ``degenerate_limit`` consecutive degenerate pivots, then
Bland's rule takes over, which rules out cycling.
"""
from __future__ import annotations

import numpy as np

from .lp import INF, LinearProgram, LpSolution, Status


def _standard_form(lp: LinearProgram):
    lo, hi = lp.bounds()
    n = lp.n_vars
    # x = D @ xt + off
    cols_D: list[np.ndarray] = []
    off = np.zeros(n)
    ub_rows: list[tuple[int, float]] = []
    for j in range(n):
        if np.isfinite(lo[j]):
            off[j] = lo[j]
            e = np.zeros(n)
            e[j] = 1.0
            cols_D.append(e)
            if np.isfinite(hi[j]):
                ub_rows.append((len(cols_D) - 1, hi[j] - lo[j]))
        elif np.isfinite(hi[j]):
            off[j] = hi[j]
            e = np.zeros(n)
            e[j] = -1.0
            cols_D.append(e)
        else:
            e = np.zeros(n)
            e[j] = 1.0
            cols_D.append(e)
            cols_D.append(-e)
    D = np.column_stack(cols_D) if cols_D else np.zeros((n, 0))
    A = lp.matrix().toarray()
    b = lp.rhs() - A @ off
    sense = lp.senses()
    nt = D.shape[1]
    m_orig = A.shape[0]
    m = m_orig + len(ub_rows)
    n_slack = int(np.count_nonzero(sense != 2)) + len(ub_rows)
    M = np.zeros((m, nt + n_slack))
    rhs = np.zeros(m)
    M[:m_orig, :nt] = A @ D
    rhs[:m_orig] = b
    k = nt
    for i in range(m_orig):
        if sense[i] == 0:
            M[i, k] = 1.0
            k += 1
        elif sense[i] == 1:
            M[i, k] = -1.0
            k += 1
    for r, (col, width) in enumerate(ub_rows):
        M[m_orig + r, col] = 1.0
        M[m_orig + r, k] = 1.0
        rhs[m_orig + r] = width
        k += 1
    sign = np.where(rhs < 0, -1.0, 1.0)
    M *= sign[:, None]
    rhs *= sign
    c = np.zeros(M.shape[1])
    c[:nt] = D.T @ lp.objective_vector()
    const = float(lp.objective_vector() @ off)
    return M, rhs, c, D, off, sign, m_orig, const


def _pivot(T: np.ndarray, r: int, col: int) -> None:
    T[r] /= T[r, col]
    piv = T[r]
    others = np.flatnonzero(T[:, col])
    for i in others:
        if i != r:
            T[i] -= T[i, col] * piv


def _run(T: np.ndarray, basis: np.ndarray, allowed: np.ndarray, tol: float,
         max_iter: int, degenerate_limit: int) -> tuple[str, int]:
    m = T.shape[0] - 1
    it = 0
    degenerate_streak = 0
    while it < max_iter:
        rc = T[-1, :-1]
        cand = np.flatnonzero((rc < -tol) & allowed)
        if cand.size == 0:
            return "optimal", it
        bland = degenerate_streak >= degenerate_limit
        col = int(cand[0]) if bland else int(cand[np.argmin(rc[cand])])
        colv = T[:m, col]
        pos = colv > tol
        if not pos.any():
            return "unbounded", it
        ratios = np.full(m, INF)
        ratios[pos] = T[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        r = int(ties[np.argmin(basis[ties])]) if bland else int(ties[np.argmax(colv[ties])])
        degenerate_streak = degenerate_streak + 1 if best <= tol else 0
        _pivot(T, r, col)
        basis[r] = col
        it += 1
    return "iteration_limit", it


def solve_tableau(lp: LinearProgram, tol: float = 1e-9, max_iter: int = 50_000,
                  degenerate_limit: int = 50) -> LpSolution:
    M, rhs, c, D, off, sign, m_orig, const = _standard_form(lp)
    m, n = M.shape
    if m == 0:
        if np.any(c < -tol):
            return LpSolution(Status.UNBOUNDED)
        x = off.copy()
        return LpSolution(Status.OPTIMAL, x=x, objective=const + lp.obj_const,
                          duals=np.zeros(0))
    # phase I: artificials on every row
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = M
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = rhs
    T[-1, :n] = -M.sum(axis=0)
    T[-1, -1] = -rhs.sum()
    basis = np.arange(n, n + m)
    allowed = np.ones(n + m, bool)
    state, it1 = _run(T, basis, allowed, tol, max_iter, degenerate_limit)
    if state == "iteration_limit":
        return LpSolution(Status.ITERATION_LIMIT, iterations=it1)
    if -T[-1, -1] > 1e-7 * max(1.0, abs(rhs).max()):
        return LpSolution(Status.INFEASIBLE, iterations=it1)
    # drive zero-level artificials out of the basis where possible
    for r in range(m):
        if basis[r] >= n:
            nz = np.flatnonzero(abs(T[r, :n]) > tol)
            if nz.size:
                _pivot(T, r, int(nz[0]))
                basis[r] = int(nz[0])
    # phase II
    allowed = np.zeros(n + m, bool)
    allowed[:n] = True
    T[-1, :] = 0.0
    T[-1, :n] = c
    for r in range(m):
        if basis[r] < n:
            T[-1] -= c[basis[r]] * T[r]
    T[-1, n:n + m] = 0.0
    state, it2 = _run(T, basis, allowed, tol, max_iter, degenerate_limit)
    its = it1 + it2
    if state == "unbounded":
        return LpSolution(Status.UNBOUNDED, iterations=its)
    if state == "iteration_limit":
        return LpSolution(Status.ITERATION_LIMIT, iterations=its)
    xt = np.zeros(n + m)
    xt[basis] = T[:m, -1]
    x = D @ xt[:D.shape[1]] + off
    # duals: B^T y = c_B on the standard-form rows
    full = np.hstack([M, np.eye(m)])
    cfull = np.concatenate([c, np.zeros(m)])
    B = full[:, basis]
    y = np.linalg.lstsq(B.T, cfull[basis], rcond=None)[0]
    duals = (sign * y)[:m_orig]
    obj = float(lp.objective_vector() @ x) + lp.obj_const
    return LpSolution(Status.OPTIMAL, x=x, objective=obj, duals=duals, iterations=its)

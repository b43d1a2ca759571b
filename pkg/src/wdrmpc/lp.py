"""Linear programs with named variables, epigraph builders and solver backends.

Every optimization problem in the package is expressed as a
:class:`LinearProgram`.  Rows are stored in sparse blocks so that large
sample-indexed epigraphs can be added with numpy instead of Python loops.

Rows carry a tag.  ``"constraint"`` rows are modelling constraints;
``"epigraph"`` rows only realize a piecewise-linear objective atom such as
``|x|``, ``max(...)`` or ``[x]_+``.  :attr:`LinearProgram.constraint_count`
counts the former, :attr:`LinearProgram.row_count` counts both.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

INF = np.inf

SENSES = ("<=", ">=", "==")


class SolverError(RuntimeError):
    """Raised when a backend fails for numerical reasons."""


class LinExpr:
    """Sparse affine expression ``sum(coef * var) + const`` over LP columns."""

    __slots__ = ("coefs", "const")

    def __init__(self, coefs: Mapping[int, float] | None = None, const: float = 0.0):
        self.coefs: dict[int, float] = dict(coefs) if coefs else {}
        self.const = float(const)

    @classmethod
    def var(cls, idx: int, coef: float = 1.0) -> "LinExpr":
        return cls({int(idx): float(coef)})

    @classmethod
    def lift(cls, other) -> "LinExpr":
        if isinstance(other, LinExpr):
            return other
        return cls(const=float(other))

    def copy(self) -> "LinExpr":
        return LinExpr(self.coefs, self.const)

    def is_constant(self) -> bool:
        return all(v == 0.0 for v in self.coefs.values())

    def __add__(self, other) -> "LinExpr":
        other = LinExpr.lift(other)
        out = LinExpr(self.coefs, self.const + other.const)
        for k, v in other.coefs.items():
            out.coefs[k] = out.coefs.get(k, 0.0) + v
        return out

    __radd__ = __add__

    def __neg__(self) -> "LinExpr":
        return LinExpr({k: -v for k, v in self.coefs.items()}, -self.const)

    def __sub__(self, other) -> "LinExpr":
        return self + (-LinExpr.lift(other))

    def __rsub__(self, other) -> "LinExpr":
        return LinExpr.lift(other) - self

    def __mul__(self, scalar) -> "LinExpr":
        s = float(scalar)
        return LinExpr({k: s * v for k, v in self.coefs.items()}, s * self.const)

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "LinExpr":
        return self * (1.0 / float(scalar))

    def value(self, x: np.ndarray | None = None) -> float:
        total = self.const
        if self.coefs:
            if x is None:
                raise ValueError("expression depends on decision variables")
            total += sum(v * x[k] for k, v in self.coefs.items())
        return total

    def __repr__(self) -> str:
        terms = " + ".join(f"{v:g}*x{k}" for k, v in sorted(self.coefs.items()))
        return f"LinExpr({terms or '0'} + {self.const:g})"


def as_expr(value) -> LinExpr:
    return LinExpr.lift(value)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITERATION_LIMIT = "IterationLimit"


@dataclass
class LpSolution:
    status: Status
    x: np.ndarray | None = None
    objective: float = float("nan")
    duals: np.ndarray | None = None
    """Row multipliers, ``d objective / d rhs`` for every row."""
    reduced_lower: np.ndarray | None = None
    reduced_upper: np.ndarray | None = None
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    def value(self, expr: LinExpr | int) -> float:
        if isinstance(expr, (int, np.integer)):
            return float(self.x[expr])
        return expr.value(self.x)


@dataclass
class _Block:
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray


@dataclass
class LinearProgram:
    """Minimization LP: ``min c@x + c0`` subject to sparse rows and bounds."""

    name: str = "lp"
    names: list[str] = field(default_factory=list)
    lo: list[float] = field(default_factory=list)
    hi: list[float] = field(default_factory=list)
    c: list[float] = field(default_factory=list)
    obj_const: float = 0.0

    def __post_init__(self):
        self._index: dict[str, int] = {}
        self._blocks: list[_Block] = []
        self._sense: list[np.ndarray] = []
        self._rhs: list[np.ndarray] = []
        self._tags: list[np.ndarray] = []
        self._row_names: list[str | None] = []
        self._nrows = 0

    # -- variables ---------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self.names)

    def add_var(self, name: str, lo: float = 0.0, hi: float = INF, obj: float = 0.0) -> int:
        if name in self._index:
            raise ValueError(f"duplicate variable name {name!r}")
        if lo > hi:
            raise ValueError(f"variable {name!r} has lo > hi")
        idx = len(self.names)
        self._index[name] = idx
        self.names.append(name)
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.c.append(float(obj))
        return idx

    def add_vars(self, name: str, shape, lo=0.0, hi=INF, obj=0.0) -> np.ndarray:
        """Add an array of variables named ``name[i,j,...]``; returns their indices."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        count = int(np.prod(shape)) if shape else 1
        lo = np.broadcast_to(np.asarray(lo, float), shape).ravel()
        hi = np.broadcast_to(np.asarray(hi, float), shape).ravel()
        obj = np.broadcast_to(np.asarray(obj, float), shape).ravel()
        if np.any(lo > hi):
            raise ValueError(f"variables {name!r} have lo > hi")
        start = len(self.names)
        for flat, multi in enumerate(np.ndindex(*shape)):
            label = f"{name}[{','.join(map(str, multi))}]"
            if label in self._index:
                raise ValueError(f"duplicate variable name {label!r}")
            self._index[label] = start + flat
            self.names.append(label)
        self.lo.extend(lo.tolist())
        self.hi.extend(hi.tolist())
        self.c.extend(obj.tolist())
        return np.arange(start, start + count).reshape(shape)

    def var(self, name: str) -> int:
        return self._index[name]

    def set_bounds(self, idx, lo=None, hi=None) -> None:
        for i in np.atleast_1d(idx):
            if lo is not None:
                self.lo[int(i)] = float(lo)
            if hi is not None:
                self.hi[int(i)] = float(hi)

    # -- objective ---------------------------------------------------------
    def add_objective(self, expr, scale: float = 1.0) -> None:
        expr = as_expr(expr)
        for k, v in expr.coefs.items():
            self.c[k] += scale * v
        self.obj_const += scale * expr.const

    def add_objective_coefs(self, idx, coefs) -> None:
        idx = np.asarray(idx).ravel()
        coefs = np.broadcast_to(np.asarray(coefs, float), idx.shape)
        for i, v in zip(idx.tolist(), coefs.tolist()):
            self.c[i] += v

    # -- rows --------------------------------------------------------------
    @property
    def row_count(self) -> int:
        return self._nrows

    @property
    def constraint_count(self) -> int:
        """Modelling constraints, excluding epigraph rows of objective atoms."""
        if not self._tags:
            return 0
        return int(sum(np.count_nonzero(t == 0) for t in self._tags))

    def add_constraint(self, expr, sense: str, rhs=0.0, name: str | None = None,
                       tag: str = "constraint") -> int:
        """Add ``expr sense rhs``; constants in ``expr`` move to the right-hand side."""
        if sense not in SENSES:
            raise ValueError(f"unknown sense {sense!r}")
        expr = as_expr(expr) - as_expr(rhs)
        if not expr.coefs:
            raise ValueError("constraint without variables")
        cols = np.fromiter(expr.coefs.keys(), int, len(expr.coefs))
        vals = np.fromiter(expr.coefs.values(), float, len(expr.coefs))
        self._append(cols[None, :], vals[None, :], sense, np.array([-expr.const]), tag)
        self._row_names[-1] = name
        return self._nrows - 1

    def add_rows(self, cols, vals, sense: str, rhs, tag: str = "constraint") -> np.ndarray:
        """Add ``m`` rows with ``k`` entries each: ``vals[i] @ x[cols[i]] sense rhs[i]``."""
        if sense not in SENSES:
            raise ValueError(f"unknown sense {sense!r}")
        cols = np.atleast_2d(np.asarray(cols, int))
        vals = np.broadcast_to(np.asarray(vals, float), cols.shape)
        rhs = np.broadcast_to(np.asarray(rhs, float), (cols.shape[0],)).copy()
        return self._append(cols, vals, sense, rhs, tag)

    def _append(self, cols, vals, sense, rhs, tag) -> np.ndarray:
        m = cols.shape[0]
        if m == 0:
            return np.empty(0, int)
        if cols.size and (cols.min() < 0 or cols.max() >= self.n_vars):
            raise ValueError("row references an undeclared variable")
        if not np.all(np.isfinite(vals)) or not np.all(np.isfinite(rhs)):
            raise ValueError("non-finite coefficient or right-hand side")
        rows = np.repeat(np.arange(self._nrows, self._nrows + m), cols.shape[1])
        self._blocks.append(_Block(rows, cols.ravel().copy(), np.array(vals, float).ravel()))
        self._sense.append(np.full(m, SENSES.index(sense), dtype=np.int8))
        self._rhs.append(np.asarray(rhs, float))
        self._tags.append(np.full(m, 0 if tag == "constraint" else 1, dtype=np.int8))
        self._row_names.extend([None] * m)
        self._nrows += m
        return np.arange(self._nrows - m, self._nrows)

    # -- matrix views ------------------------------------------------------
    def matrix(self) -> sp.csr_matrix:
        if not self._blocks:
            return sp.csr_matrix((0, self.n_vars))
        rows = np.concatenate([b.rows for b in self._blocks])
        cols = np.concatenate([b.cols for b in self._blocks])
        vals = np.concatenate([b.vals for b in self._blocks])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self._nrows, self.n_vars))

    def senses(self) -> np.ndarray:
        return np.concatenate(self._sense) if self._sense else np.empty(0, np.int8)

    def rhs(self) -> np.ndarray:
        return np.concatenate(self._rhs) if self._rhs else np.empty(0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.lo, float), np.array(self.hi, float)

    def objective_vector(self) -> np.ndarray:
        return np.array(self.c, float)

    def row_name(self, i: int) -> str:
        return self._row_names[i] or f"r{i}"

    # -- export ------------------------------------------------------------
    def to_lp_text(self) -> str:
        """Render in the CPLEX LP text format."""
        def clean(s: str) -> str:
            return re.sub(r"[^A-Za-z0-9_.()!\"#$%&/,;?@'{}|~]", "_",
                          s.replace("[", "(").replace("]", ")"))

        names = [clean(n) for n in self.names]

        def terms(idx, vals) -> str:
            parts = []
            for i, v in zip(idx, vals):
                if v == 0.0:
                    continue
                parts.append(f"{'-' if v < 0 else '+'} {abs(v):.17g} {names[i]}")
            return " ".join(parts) if parts else "0 " + names[0]

        c = self.objective_vector()
        nz = np.flatnonzero(c)
        lines = [f"\\ {self.name}", f"\\ objective constant {self.obj_const:.17g}",
                 "Minimize", " obj: " + terms(nz, c[nz]), "Subject To"]
        A = self.matrix()
        sense_txt = {0: "<=", 1: ">=", 2: "="}
        b = self.rhs()
        s = self.senses()
        for i in range(self._nrows):
            lo, hi = A.indptr[i], A.indptr[i + 1]
            lines.append(f" {clean(self.row_name(i))}: {terms(A.indices[lo:hi], A.data[lo:hi])}"
                         f" {sense_txt[int(s[i])]} {b[i]:.17g}")
        lines.append("Bounds")
        for n, lo, hi in zip(names, self.lo, self.hi):
            if lo == -INF and hi == INF:
                lines.append(f" {n} free")
            elif lo == hi:
                lines.append(f" {n} = {lo:.17g}")
            else:
                lo_s = "-inf" if lo == -INF else f"{lo:.17g}"
                hi_s = "+inf" if hi == INF else f"{hi:.17g}"
                lines.append(f" {lo_s} <= {n} <= {hi_s}")
        lines.append("End")
        return "\n".join(lines) + "\n"

    def write_lp(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_lp_text())


# -- epigraph builders -----------------------------------------------------

def add_abs_epigraph(lp: LinearProgram, expr, name: str | None = None) -> int:
    """New variable ``t`` with ``t >= expr`` and ``t >= -expr``."""
    expr = as_expr(expr)
    t = lp.add_var(name or f"abs{lp.n_vars}", lo=0.0)
    lp.add_constraint(LinExpr.var(t) - expr, ">=", 0.0, tag="epigraph")
    lp.add_constraint(LinExpr.var(t) + expr, ">=", 0.0, tag="epigraph")
    return t


def add_max_epigraph(lp: LinearProgram, exprs: Iterable, name: str | None = None) -> int:
    """New free variable ``t`` with ``t >= e`` for every expression."""
    exprs = [as_expr(e) for e in exprs]
    if not exprs:
        raise ValueError("max of an empty set")
    t = lp.add_var(name or f"max{lp.n_vars}", lo=-INF)
    for e in exprs:
        lp.add_constraint(LinExpr.var(t) - e, ">=", 0.0, tag="epigraph")
    return t


def add_hinge(lp: LinearProgram, expr, name: str | None = None) -> int:
    """New variable ``t >= 0`` with ``t >= expr``."""
    expr = as_expr(expr)
    t = lp.add_var(name or f"hinge{lp.n_vars}", lo=0.0)
    if expr.coefs:
        lp.add_constraint(LinExpr.var(t) - expr, ">=", 0.0, tag="epigraph")
    else:
        lp.set_bounds(t, lo=max(0.0, expr.const))
    return t


def add_hinge_block(lp: LinearProgram, name: str, cols, vals, const, obj=0.0) -> np.ndarray:
    """Vectorized hinges ``t_i >= [vals[i] @ x[cols[i]] + const[i]]_+``."""
    cols = np.atleast_2d(np.asarray(cols, int))
    vals = np.broadcast_to(np.asarray(vals, float), cols.shape)
    const = np.broadcast_to(np.asarray(const, float), (cols.shape[0],))
    t = lp.add_vars(name, cols.shape[0], lo=0.0, obj=obj)
    lp.add_rows(np.column_stack([t, cols]), np.column_stack([np.ones(len(t)), -vals]),
                ">=", const, tag="epigraph")
    return t


# -- solving ---------------------------------------------------------------

Backend = Callable[..., LpSolution]
_BACKENDS: dict[str, Backend] = {}


def register_backend(name: str, fn: Backend) -> None:
    """Make ``solve(lp, method=name)`` delegate to ``fn(lp, **options)``."""
    _BACKENDS[name] = fn


def solve(lp: LinearProgram, method: str = "highs", **options) -> LpSolution:
    """Solve ``lp``.  Infeasible and unbounded problems are statuses, not errors."""
    try:
        backend = _BACKENDS[method]
    except KeyError:
        raise ValueError(f"unknown LP backend {method!r}") from None
    return backend(lp, **options)


def _solve_highs(lp: LinearProgram, time_limit: float | None = None,
                 primal_tol: float = 1e-9, dual_tol: float = 1e-9) -> LpSolution:
    A = lp.matrix().tocsr()
    s = lp.senses()
    b = lp.rhs()
    le, ge, eq = s == 0, s == 1, s == 2
    A_ub = sp.vstack([A[le], -A[ge]]) if (le.any() or ge.any()) else None
    b_ub = np.concatenate([b[le], -b[ge]]) if A_ub is not None else None
    A_eq = A[eq] if eq.any() else None
    b_eq = b[eq] if eq.any() else None
    lo, hi = lp.bounds()
    options = {"primal_feasibility_tolerance": primal_tol,
               "dual_feasibility_tolerance": dual_tol, "presolve": True}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = linprog(lp.objective_vector(), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=np.column_stack([lo, hi]), method="highs", options=options)
    status = {0: Status.OPTIMAL, 1: Status.ITERATION_LIMIT, 2: Status.INFEASIBLE,
              3: Status.UNBOUNDED}.get(res.status)
    if status is None:
        raise SolverError(f"HiGHS failed: {res.message}")
    if status is not Status.OPTIMAL:
        return LpSolution(status, iterations=int(getattr(res, "nit", 0)))
    duals = np.zeros(lp.row_count)
    n_le, n_ge = int(le.sum()), int(ge.sum())
    if n_le or n_ge:
        marg = res.ineqlin.marginals
        duals[np.flatnonzero(le)] = marg[:n_le]
        duals[np.flatnonzero(ge)] = -marg[n_le:n_le + n_ge]
    if eq.any():
        duals[np.flatnonzero(eq)] = res.eqlin.marginals
    return LpSolution(Status.OPTIMAL, x=np.asarray(res.x), objective=float(res.fun) + lp.obj_const,
                      duals=duals, reduced_lower=np.asarray(res.lower.marginals),
                      reduced_upper=np.asarray(res.upper.marginals),
                      iterations=int(getattr(res, "nit", 0)))


def _solve_simplex(lp: LinearProgram, **options) -> LpSolution:
    from .simplex import solve_tableau

    return solve_tableau(lp, **options)


register_backend("highs", _solve_highs)
register_backend("simplex", _solve_simplex)


def duality_gap(lp: LinearProgram, sol: LpSolution) -> float:
    """Scaled gap between ``c@x`` and the dual objective ``b@y + bound terms``."""
    lo, hi = lp.bounds()
    c = lp.objective_vector()
    A = lp.matrix()
    y = sol.duals
    reduced = c - A.T @ y
    dual_obj = float(lp.rhs() @ y)
    for j, r in enumerate(reduced):
        if abs(r) <= 1e-12:
            continue
        bound = lo[j] if r > 0 else hi[j]
        if not np.isfinite(bound):
            return float("inf")
        dual_obj += r * bound
    primal = float(c @ sol.x)
    return abs(primal - dual_obj) / max(1.0, abs(primal))


def primal_residual(lp: LinearProgram, x: np.ndarray) -> float:
    """Largest scaled violation of rows and bounds at ``x``."""
    A = lp.matrix()
    ax = A @ x
    b = lp.rhs()
    s = lp.senses()
    scale = 1.0 + np.maximum(abs(b), np.asarray(abs(A).max(axis=1).todense()).ravel()
                             if A.shape[0] else 0.0)
    viol = np.where(s == 0, ax - b, np.where(s == 1, b - ax, abs(ax - b)))
    lo, hi = lp.bounds()
    bound_viol = np.maximum(lo - x, x - hi)
    worst = np.max(np.maximum(viol, 0.0) / scale) if len(viol) else 0.0
    return float(max(worst, np.max(np.maximum(bound_viol, 0.0), initial=0.0)))

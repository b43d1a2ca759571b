"""Max-affine losses, CVaR construction and Wasserstein DRO reformulations.

Losses have the form ``l(xi) = max_j <a_j, xi> + b_j`` where every entry of
``a_j`` and ``b_j`` is a :class:`~wdrmpc.lp.LinExpr`, so the same object
describes a plain numeric loss and a loss whose coefficients are decision
variables of an enclosing LP.

The Wasserstein ball uses the l1 ground metric and a box support.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .lp import INF, LinearProgram, LinExpr, Status, add_hinge_block, as_expr, solve
from .uncertainty import SampleSet, WassersteinBall


class GridTooCoarseWarning(RuntimeWarning):
    pass


class UnboundedSupportError(ValueError):
    """Worst-case expectation is unbounded because the support is not a finite box."""


@dataclass
class HingeForm:
    """``const + sum_k scale_k * [<g_k, xi> + h_k]_+``: a cheaper exact rewrite of a CVaR loss."""

    const: LinExpr
    hinges: list[tuple[float, list[LinExpr], LinExpr]]
    exclusive: bool = False
    """At most one hinge is positive at any ``xi``, so one epigraph variable covers all."""


@dataclass
class MaxAffineLoss:
    slopes: list[list[LinExpr]]
    offsets: list[LinExpr]
    hinge_form: HingeForm | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.slopes or len(self.slopes) != len(self.offsets):
            raise ValueError("a max-affine loss needs at least one piece")
        dims = {len(a) for a in self.slopes}
        if len(dims) != 1:
            raise ValueError("all pieces must share one dimension")
        self.slopes = [[as_expr(v) for v in a] for a in self.slopes]
        self.offsets = [as_expr(b) for b in self.offsets]
        for a in self.slopes:
            if not all(np.isfinite(v.const) for v in a):
                raise ValueError("non-finite slope")

    @classmethod
    def from_arrays(cls, A, b) -> "MaxAffineLoss":
        A = np.atleast_2d(np.asarray(A, float))
        b = np.asarray(b, float).ravel()
        return cls([[LinExpr(const=v) for v in row] for row in A], [LinExpr(const=v) for v in b])

    @property
    def dim(self) -> int:
        return len(self.slopes[0])

    @property
    def n_pieces(self) -> int:
        return len(self.slopes)

    def is_numeric(self) -> bool:
        return all(v.is_constant() for a in self.slopes for v in a) and all(
            b.is_constant() for b in self.offsets)

    def bind(self, x: np.ndarray) -> "MaxAffineLoss":
        """Numeric loss obtained by fixing the decision variables at ``x``."""
        return MaxAffineLoss.from_arrays(
            [[v.value(x) for v in a] for a in self.slopes], [b.value(x) for b in self.offsets])

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.is_numeric():
            raise ValueError("loss still depends on decision variables; bind it first")
        A = np.array([[v.const for v in a] for a in self.slopes])
        b = np.array([v.const for v in self.offsets])
        return A, b

    def piece_values(self, xi) -> np.ndarray:
        A, b = self.arrays()
        xi = np.atleast_2d(np.asarray(xi, float))
        if xi.shape[1] != self.dim and xi.shape[0] == self.dim:
            xi = xi.T
        return xi @ A.T + b

    def __call__(self, xi) -> np.ndarray:
        return self.piece_values(xi).max(axis=1)

    def active_piece(self, xi) -> np.ndarray:
        """Lowest-index maximizing piece at each point."""
        v = self.piece_values(xi)
        return np.argmax(v >= v.max(axis=1, keepdims=True) - 1e-12, axis=1)

    def subgradient(self, xi) -> np.ndarray:
        A, _ = self.arrays()
        return A[self.active_piece(xi)]

    def lipschitz(self) -> float:
        """Global l1-Lipschitz constant ``max_j ||a_j||_inf`` of a numeric loss."""
        A, _ = self.arrays()
        return float(np.abs(A).max()) if A.size else 0.0

    def piece_rows(self, j: int, points: np.ndarray):
        """Affine forms of piece ``j`` at each point: returns ``(cols, coef, const)``.

        ``coef[i] @ x[cols] + const[i]`` equals ``<a_j, points[i]> + b_j``.
        """
        return _affine_rows(self.slopes[j], self.offsets[j], points)


def _affine_rows(slope: list[LinExpr], offset: LinExpr, points: np.ndarray):
    cols = sorted(set().union(*(v.coefs for v in slope), offset.coefs))
    pos = {c: i for i, c in enumerate(cols)}
    S = np.zeros((len(slope), len(cols)))
    s0 = np.array([v.const for v in slope])
    for m, v in enumerate(slope):
        for k, c in v.coefs.items():
            S[m, pos[k]] += c
    bvec = np.zeros(len(cols))
    for k, c in offset.coefs.items():
        bvec[pos[k]] += c
    points = np.atleast_2d(points)
    coef = points @ S + bvec
    const = points @ s0 + offset.const
    return np.array(cols, int), coef, const


@dataclass
class CvarSpec:
    """Risk relaxation of a two-sided constraint through CVaR.

    ``lower`` and ``upper`` are ``(g, h)`` pairs describing the violation
    functions ``f(xi) = <g, xi> + h`` of each side: a side is violated when its
    function is positive.  ``omega1``/``omega2`` are the CVaR thresholds.
    """

    beta: float
    lower: tuple[list, object]
    upper: tuple[list, object]
    weight: float = 1.0
    omega1: object = 0.0
    omega2: object = 0.0
    exclusive: bool = False
    """Set when both sides can never be violated at once (reserves with a non-negative sum)."""

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.weight < 0:
            raise ValueError("weight must be non-negative")


def two_sided_spec(beta: float, g, reserve_low, reserve_high, weight: float = 1.0,
                   omega1=0.0, omega2=0.0, exclusive: bool = False) -> CvarSpec:
    """CvarSpec for ``-reserve_low <= <g, xi> <= reserve_high``.

    Pass ``exclusive=True`` only when ``reserve_low + reserve_high >= 0`` is
    enforced elsewhere.
    """
    g = [as_expr(v) for v in g]
    neg = [-v for v in g]
    return CvarSpec(beta, (neg, -as_expr(reserve_low)), (g, -as_expr(reserve_high)),
                    weight, omega1, omega2, exclusive)


def cvar_max_affine(spec: CvarSpec) -> MaxAffineLoss:
    """Four-piece max-affine form of the two-sided CVaR loss.

    ``w1 + w2 + ([f1 - w1]_+ + [f2 - w2]_+) / (1 - beta)`` equals the maximum of
    the pieces "both sides", "lower only", "upper only" and "neither".
    """
    k = 1.0 / (1.0 - spec.beta)
    mu = spec.weight
    g1, h1 = [as_expr(v) for v in spec.lower[0]], as_expr(spec.lower[1])
    g2, h2 = [as_expr(v) for v in spec.upper[0]], as_expr(spec.upper[1])
    if len(g1) != len(g2):
        raise ValueError("both sides need the same dimension")
    w1, w2 = as_expr(spec.omega1), as_expr(spec.omega2)
    base = w1 + w2
    slopes = [
        [(a + b) * (k * mu) for a, b in zip(g1, g2)],
        [a * (k * mu) for a in g1],
        [b * (k * mu) for b in g2],
        [LinExpr() for _ in g1],
    ]
    offsets = [
        (base + (h1 - w1 + h2 - w2) * k) * mu,
        (base + (h1 - w1) * k) * mu,
        (base + (h2 - w2) * k) * mu,
        base * mu,
    ]
    # with zero thresholds the sides sum to minus the total reserve, so an
    # exclusive spec never has both hinges positive
    exclusive = spec.exclusive and base.is_constant() and w1.const == 0.0 and w2.const == 0.0
    hinge = HingeForm(base * mu, [(k * mu, g1, h1 - w1), (k * mu, g2, h2 - w2)], exclusive)
    return MaxAffineLoss(slopes, offsets, hinge)


def saa_value(loss: MaxAffineLoss, samples) -> float:
    pts = samples.samples if isinstance(samples, SampleSet) else np.asarray(samples, float)
    pts = np.atleast_2d(pts)
    if pts.shape[1] != loss.dim:
        pts = pts.reshape(-1, loss.dim)
    return float(np.mean(loss(pts)))


def empirical_cvar(values, beta: float) -> float:
    """CVaR of the empirical distribution of ``values`` at level ``beta``.

    Minimizes the Rockafellar-Uryasev function over its kinks (the samples).
    """
    v = np.asarray(values, float).ravel()
    k = 1.0 / ((1.0 - beta) * v.size)
    F = v + k * np.maximum(v[None, :] - v[:, None], 0.0).sum(axis=1)
    return float(F.min())


def cvar_lp(values, beta: float, method: str = "highs") -> float:
    """Same quantity as :func:`empirical_cvar`, computed by its epigraph LP."""
    v = np.asarray(values, float).ravel()
    lp = LinearProgram("cvar")
    w = lp.add_var("omega", lo=-INF, obj=1.0)
    add_hinge_block(lp, "t", np.full((v.size, 1), w), -1.0, v, obj=1.0 / ((1.0 - beta) * v.size))
    sol = solve(lp, method)
    return sol.objective


@dataclass
class DroValue:
    objective: float
    lam: float
    per_sample_s: np.ndarray | None = None
    status: Status = Status.OPTIMAL


@dataclass
class DroTerm:
    """Column indices of a DRO term added to an LP."""

    lam: int
    s: np.ndarray | None = None


def _support(ball: WassersteinBall) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = ball.center.support_lo, ball.center.support_hi
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise UnboundedSupportError("support box must be finite")
    return lo, hi


def add_exact_dual(lp: LinearProgram, loss: MaxAffineLoss, ball: WassersteinBall,
                   scale: float = 1.0, name: str = "dro") -> DroTerm:
    """Add ``scale * (lam*eps + mean(s))`` with the vertex constraints of the exact dual."""
    lo, hi = _support(ball)
    xi = ball.center.samples
    N, dim = xi.shape
    if dim != loss.dim:
        raise ValueError("sample dimension does not match the loss")
    lam = lp.add_var(f"{name}.lam", lo=0.0, obj=scale * ball.radius)
    s = lp.add_vars(f"{name}.s", N, lo=-INF, obj=scale / N)
    if dim == 1:
        vertices = [np.full((N, 1), lo[0]), xi, np.full((N, 1), hi[0])]
        dists = [xi[:, 0] - lo[0], np.zeros(N), hi[0] - xi[:, 0]]
        for j in range(loss.n_pieces):
            for v, dist in zip(vertices, dists):
                cols, coef, const = loss.piece_rows(j, v)
                # s_i - piece_j(v) + lam * |v - xi_i| >= 0
                all_cols = np.column_stack([s, np.full(N, lam), np.broadcast_to(cols, (N, cols.size))])
                vals = np.column_stack([np.ones(N), dist, -coef])
                lp.add_rows(all_cols, vals, ">=", const)
        return DroTerm(lam, s)
    for j in range(loss.n_pieces):
        _, bcoef, bconst = _affine_rows([LinExpr() for _ in range(dim)], loss.offsets[j], np.zeros((1, dim)))
        bcols = np.array(sorted(loss.offsets[j].coefs), int)
        phi_cols = []
        for m in range(dim):
            a = loss.slopes[j][m]
            if not a.coefs and a.const == 0.0:
                continue
            phi = lp.add_vars(f"{name}.phi{j}_{m}", N, lo=-INF)
            phi_cols.append(phi)
            acols = np.array(sorted(a.coefs), int)
            avals = np.array([a.coefs[c] for c in acols])
            for v, dist in ((np.full(N, lo[m]), xi[:, m] - lo[m]), (xi[:, m], np.zeros(N)),
                            (np.full(N, hi[m]), hi[m] - xi[:, m])):
                # phi - v * a_jm + lam * dist >= 0
                cols = np.column_stack([phi, np.full(N, lam), np.broadcast_to(acols, (N, acols.size))])
                vals = np.column_stack([np.ones(N), dist, -v[:, None] * avals[None, :]])
                lp.add_rows(cols, vals, ">=", v * a.const)
        # s_i - sum_m phi_im - b_j >= 0
        k = len(phi_cols)
        cols = np.column_stack([s] + phi_cols + [np.broadcast_to(bcols, (N, bcols.size))])
        vals = np.column_stack([np.ones(N)] + [-np.ones(N)] * k
                               + [np.broadcast_to(-bcoef[0], (N, bcols.size))])
        lp.add_rows(cols, vals, ">=", np.full(N, bconst[0]))
    return DroTerm(lam, s)


def _never_positive(lp: LinearProgram, cols: np.ndarray, coef: np.ndarray, const: np.ndarray):
    """Rows where ``coef @ x[cols] + const <= 0`` for every ``x`` inside the current bounds."""
    lo = np.array([lp.lo[c] for c in cols], float)
    hi = np.array([lp.hi[c] for c in cols], float)
    with np.errstate(invalid="ignore"):
        top = np.where(coef > 0, coef * hi, np.where(coef < 0, coef * lo, 0.0)).sum(axis=-1)
    return top + const <= 0.0


def add_lipschitz_bound(lp: LinearProgram, loss: MaxAffineLoss, lam: int) -> None:
    """Constrain ``lam >= ||a_j||_inf`` for every piece."""
    floor = 0.0
    for a in loss.slopes:
        for v in a:
            if v.is_constant():
                floor = max(floor, abs(v.const))
                continue
            lp.add_constraint(LinExpr.var(lam) - v, ">=", 0.0)
            lp.add_constraint(LinExpr.var(lam) + v, ">=", 0.0)
    lp.set_bounds(lam, lo=max(lp.lo[lam], floor))


def add_saa(lp: LinearProgram, loss: MaxAffineLoss, samples: np.ndarray, scale: float = 1.0,
            name: str = "saa") -> None:
    """Add ``scale * mean_i loss(samples[i])`` to the objective through epigraph rows."""
    N = samples.shape[0]
    if loss.is_numeric():
        lp.obj_const += scale * float(np.mean(loss(samples)))
        return
    if loss.hinge_form is not None:
        hf = loss.hinge_form
        lp.add_objective(hf.const, scale)
        if hf.exclusive and len({m for m, _, _ in hf.hinges}) == 1:
            # rows that the variable bounds already rule out are dropped
            mult = hf.hinges[0][0]
            t = lp.add_vars(f"{name}.t", N, lo=0.0, obj=scale * mult / N)
            for g, h in ((g, h) for _, g, h in hf.hinges):
                cols, coef, const = _affine_rows(g, h, samples)
                keep = ~_never_positive(lp, cols, coef, const)
                if not keep.any():
                    continue
                all_cols = np.column_stack([t[keep], np.broadcast_to(cols, (int(keep.sum()), cols.size))])
                lp.add_rows(all_cols, np.column_stack([np.ones(int(keep.sum())), -coef[keep]]), ">=",
                            const[keep], tag="epigraph")
            return
        for k, (mult, g, h) in enumerate(hf.hinges):
            cols, coef, const = _affine_rows(g, h, samples)
            if cols.size == 0:
                lp.obj_const += scale * mult * float(np.maximum(const, 0.0).mean())
                continue
            add_hinge_block(lp, f"{name}.h{k}", np.broadcast_to(cols, (N, cols.size)), coef, const,
                            obj=scale * mult / N)
        return
    t = lp.add_vars(f"{name}.t", N, lo=-INF, obj=scale / N)
    for j in range(loss.n_pieces):
        cols, coef, const = loss.piece_rows(j, samples)
        all_cols = np.column_stack([t, np.broadcast_to(cols, (N, cols.size))])
        lp.add_rows(all_cols, np.column_stack([np.ones(N), -coef]), ">=", const, tag="epigraph")


def add_accelerated(lp: LinearProgram, loss: MaxAffineLoss, ball: WassersteinBall,
                    scale: float = 1.0, name: str = "dro") -> DroTerm:
    """Add ``scale * (lam*eps + mean loss(xi_i))`` with ``lam >= Lipschitz constant``.

    The number of constraints does not depend on the sample count; the
    sample-average term only contributes epigraph rows of the objective.
    """
    _support(ball)
    if ball.center.dim != loss.dim:
        raise ValueError("sample dimension does not match the loss")
    lam = lp.add_var(f"{name}.lam", lo=0.0, obj=scale * ball.radius)
    add_lipschitz_bound(lp, loss, lam)
    add_saa(lp, loss, ball.center.samples, scale, name)
    return DroTerm(lam)


def _standalone(builder, loss, ball, method) -> tuple[DroValue, LinearProgram]:
    lp = LinearProgram(builder.__name__)
    term = builder(lp, loss, ball)
    sol = solve(lp, method)
    if not sol.ok:
        return DroValue(float("nan"), float("nan"), status=sol.status), lp
    s = None if term.s is None else sol.x[term.s]
    return DroValue(sol.objective, float(sol.x[term.lam]), s), lp


def exact_dual(loss: MaxAffineLoss, ball: WassersteinBall, method: str = "highs"):
    """Worst-case expectation of a numeric loss over the ball, via the exact dual LP."""
    return _standalone(add_exact_dual, loss, ball, method)


def accelerated(loss: MaxAffineLoss, ball: WassersteinBall, method: str = "highs"):
    """Lipschitz upper approximation of :func:`exact_dual`."""
    return _standalone(add_accelerated, loss, ball, method)


def brute_force_worst_case(loss: MaxAffineLoss, ball: WassersteinBall, grid_points: int = 10001,
                           refine_tol: float | None = None, method: str = "highs") -> float:
    """Discretize the support and solve the primal transport LP for the worst case.

    Supports scalar and 2-dimensional losses.  The grid always contains the
    samples themselves.  With ``refine_tol`` the value is recomputed on a grid
    of half the resolution and a :class:`GridTooCoarseWarning` is issued when
    the two differ by more than the tolerance.
    """
    lo, hi = _support(ball)
    xi = ball.center.samples
    N, dim = xi.shape
    if dim not in (1, 2):
        raise ValueError("brute force oracle only handles 1 or 2 dimensions")

    def grid(points: int) -> np.ndarray:
        axes = [np.union1d(np.linspace(lo[m], hi[m], points), xi[:, m]) for m in range(dim)]
        if dim == 1:
            return axes[0][:, None]
        g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
        return g

    def value(points: int) -> float:
        G = grid(points)
        Q = G.shape[0]
        lvals = loss(G)
        lp = LinearProgram("transport")
        pi = lp.add_vars("pi", (N, Q), lo=0.0, obj=-np.broadcast_to(lvals, (N, Q)))
        lp.add_rows(pi, 1.0, "==", np.full(N, 1.0 / N))
        dist = np.abs(xi[:, None, :] - G[None, :, :]).sum(axis=2)
        lp.add_rows(pi.reshape(1, -1), dist.reshape(1, -1), "<=", [ball.radius])
        sol = solve(lp, method)
        if not sol.ok:
            raise RuntimeError(f"transport LP ended with {sol.status}")
        return -sol.objective

    v = value(grid_points)
    if refine_tol is not None:
        coarse = value((grid_points - 1) // 2 + 1)
        if abs(v - coarse) > refine_tol:
            warnings.warn(f"worst case moved by {abs(v - coarse):.3g} under refinement",
                          GridTooCoarseWarning, stacklevel=2)
    return v

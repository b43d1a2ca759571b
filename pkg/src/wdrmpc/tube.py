"""Closed-loop error dynamics, ambiguity tubes and interval constraint tightening.

The battery plant is a decoupled integrator per station,
``x(t+1) = x(t) + u(t) + w(t)``.  With the policy ``u = v + K (x - z)`` the
error ``e = x - z`` obeys ``e(t+1) = (A + BK) e(t) + w(t)`` with ``e(0) = 0``,
and the nominal pair ``(z, v)`` must live in sets shrunk by the tube that
contains ``e``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dro import add_accelerated, add_exact_dual, cvar_max_affine, CvarSpec
from .lp import INF, LinearProgram, LinExpr, solve
from .uncertainty import DisturbanceDataset, SampleSet, WassersteinBall


class EmptyTightenedSet(ValueError):
    def __init__(self, message: str, slot: int | None = None, dim: int | None = None):
        super().__init__(message)
        self.slot = slot
        self.dim = dim


@dataclass(frozen=True)
class ClosedLoopSystem:
    """Diagonal plant: one scalar ``a, b, k`` triple per dimension."""

    a: np.ndarray
    b: np.ndarray
    k_gain: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "k_gain"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), float)))
        if not (self.a.shape == self.b.shape == self.k_gain.shape):
            raise ValueError("a, b and k_gain must share one shape")
        if np.any(np.abs(self.closed_loop) >= 1.0):
            raise ValueError("closed loop is not stable")

    @classmethod
    def integrator(cls, dim: int = 1, rho: float = 0.5) -> "ClosedLoopSystem":
        a, b = np.ones(dim), np.ones(dim)
        return cls(a, b, design_feedback_gain(rho, a, b))

    @property
    def dim(self) -> int:
        return self.a.size

    @property
    def closed_loop(self) -> np.ndarray:
        return self.a + self.b * self.k_gain


def design_feedback_gain(rho: float, a=1.0, b=1.0) -> np.ndarray:
    """Contraction gain placing every closed-loop pole at ``rho``.

    For the integrator ``a = b = 1`` this is ``K = rho - 1``.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("contraction factor must lie in [0, 1)")
    a = np.atleast_1d(np.asarray(a, float))
    b = np.broadcast_to(np.asarray(b, float), a.shape)
    if np.any(b == 0):
        raise ValueError("uncontrollable dimension")
    return (rho - a) / b


def propagate_error_samples(system: ClosedLoopSystem, data: DisturbanceDataset | np.ndarray) -> np.ndarray:
    """Error samples ``e_i(t)`` for ``t = 0..T``; returns ``(n, T + 1, d)``."""
    w = data.sequences if isinstance(data, DisturbanceDataset) else np.asarray(data, float)
    if w.ndim == 2:
        w = w[:, :, None]
    if w.shape[2] != system.dim:
        raise ValueError(f"disturbances have {w.shape[2]} dims, system has {system.dim}")
    n, T, d = w.shape
    e = np.zeros((n, T + 1, d))
    phi = system.closed_loop
    for t in range(T):
        e[:, t + 1] = phi * e[:, t] + w[:, t]
    return e


def error_support(system: ClosedLoopSystem, w_lo, w_hi) -> tuple[np.ndarray, np.ndarray]:
    """Interval hull of the reachable errors, by interval arithmetic on the recursion."""
    w_lo, w_hi = np.atleast_2d(w_lo), np.atleast_2d(w_hi)
    T, d = w_lo.shape
    lo, hi = np.zeros((T + 1, d)), np.zeros((T + 1, d))
    phi = system.closed_loop
    for t in range(T):
        cands = np.stack([phi * lo[t], phi * hi[t]])
        lo[t + 1] = cands.min(axis=0) + w_lo[t]
        hi[t + 1] = cands.max(axis=0) + w_hi[t]
    return lo, hi


@dataclass(frozen=True)
class AmbiguityTube:
    lo: np.ndarray
    hi: np.ndarray
    """``(T, d)`` per-slot bounds of the error."""

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_2d(np.asarray(self.lo, float)))
        object.__setattr__(self, "hi", np.atleast_2d(np.asarray(self.hi, float)))
        if self.lo.shape != self.hi.shape:
            raise ValueError("bound arrays differ in shape")
        if np.any(self.lo > self.hi + 1e-12):
            raise ValueError("tube lower bound above upper bound")

    @classmethod
    def zero(cls, horizon: int, dim: int = 1) -> "AmbiguityTube":
        return cls(np.zeros((horizon, dim)), np.zeros((horizon, dim)))

    @property
    def horizon(self) -> int:
        return self.lo.shape[0]

    @property
    def dim(self) -> int:
        return self.lo.shape[1]

    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def radius(self) -> float:
        """Largest half-width over slots and dimensions."""
        return float(0.5 * self.width().max()) if self.lo.size else 0.0

    def contains(self, errors: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Per-trajectory flag: every slot and dimension inside the tube."""
        e = np.asarray(errors, float)
        T = min(self.horizon, e.shape[1])
        inside = (e[:, :T] >= self.lo[:T] - tol) & (e[:, :T] <= self.hi[:T] + tol)
        return inside.all(axis=(1, 2))


def tube_slot_lp(errors, lo, hi, epsilon: float, mu: float, beta: float,
                 method: str = "accelerated"):
    """The per-slot, per-dimension tube LP; returns ``(lp, alpha_lo, alpha_hi)``.

    Minimizes ``alpha_hi - alpha_lo`` plus ``mu`` times the worst-case CVaR
    penalty for an error leaving ``[alpha_lo, alpha_hi]``.  The CVaR
    thresholds are held at zero; see the README for the reasoning.
    """
    lp = LinearProgram("tube")
    a_lo = lp.add_var("alpha_lo", lo=-INF, obj=-1.0)
    a_hi = lp.add_var("alpha_hi", lo=-INF, obj=1.0)
    lp.add_constraint(LinExpr.var(a_hi) - LinExpr.var(a_lo), ">=", 0.0)
    spec = CvarSpec(beta, ([-1.0], LinExpr.var(a_lo)), ([1.0], -LinExpr.var(a_hi)), weight=mu,
                    exclusive=True)
    loss = cvar_max_affine(spec)
    ball = WassersteinBall(SampleSet(np.asarray(errors, float)[:, None], lo, hi), epsilon)
    if method == "accelerated":
        add_accelerated(lp, loss, ball, name="tube")
    elif method == "exact":
        add_exact_dual(lp, loss, ball, name="tube")
    else:
        raise ValueError(f"unknown tube method {method!r}")
    return lp, a_lo, a_hi


def stage1_tube_bounds(errors: np.ndarray, support_lo: np.ndarray, support_hi: np.ndarray,
                       epsilon: float = 1e-3, mu: float = 1e3, beta: float = 0.95,
                       method: str = "accelerated", solver: str = "highs") -> AmbiguityTube:
    """Distributionally robust tube from ``(n, T, d)`` error samples."""
    errors = np.asarray(errors, float)
    if errors.ndim == 2:
        errors = errors[:, :, None]
    _, T, d = errors.shape
    lo, hi = np.zeros((T, d)), np.zeros((T, d))
    for t in range(T):
        for j in range(d):
            e = errors[:, t, j]
            s_lo = min(support_lo[t, j], e.min())
            s_hi = max(support_hi[t, j], e.max())
            if s_hi - s_lo <= 0.0:
                lo[t, j] = hi[t, j] = s_lo
                continue
            lp, a_lo, a_hi = tube_slot_lp(e, [s_lo], [s_hi], epsilon, mu, beta, method)
            sol = solve(lp, solver)
            if not sol.ok:
                raise RuntimeError(f"tube LP at slot {t}, dim {j}: {sol.status}")
            lo[t, j], hi[t, j] = sol.x[a_lo], sol.x[a_hi]
    return AmbiguityTube(lo, np.maximum(hi, lo))


def quantile_tube(errors: np.ndarray, beta: float) -> AmbiguityTube:
    """Per-slot central ``beta`` inner quantile range of the error samples."""
    errors = np.asarray(errors, float)
    if errors.ndim == 2:
        errors = errors[:, :, None]
    q = np.quantile(errors, [(1 - beta) / 2, (1 + beta) / 2], axis=0)
    return AmbiguityTube(q[0], q[1])


def pontryagin_tighten(outer, inner, gain: float | None = None, tol: float = 1e-12):
    """``[a, b] minus [c, d] = [a - c, b - d]``; with ``gain`` the inner set is ``gain * [c, d]``."""
    a, b = map(float, outer)
    c, d = map(float, inner)
    if gain is not None:
        c, d = sorted((gain * c, gain * d))
    lo, hi = a - c, b - d
    if hi < lo - tol:
        raise EmptyTightenedSet(f"[{a}, {b}] cannot absorb [{c}, {d}]")
    return lo, max(hi, lo)


@dataclass(frozen=True)
class TightenedSets:
    z_lo: np.ndarray
    z_hi: np.ndarray
    v_lo: np.ndarray
    v_hi: np.ndarray
    """All ``(T, d)``."""

    @property
    def horizon(self) -> int:
        return self.z_lo.shape[0]


def assemble_tube(system: ClosedLoopSystem, tube: AmbiguityTube, x_box, u_box) -> TightenedSets:
    """Shrink the state box by the tube and the input box by ``K`` times the tube.

    ``x_box`` and ``u_box`` are ``(lo, hi)`` pairs of per-dimension arrays.
    """
    T, d = tube.horizon, tube.dim
    x_lo, x_hi = (np.broadcast_to(np.asarray(v, float), (d,)) for v in x_box)
    u_lo, u_hi = (np.broadcast_to(np.asarray(v, float), (d,)) for v in u_box)
    out = np.zeros((4, T, d))
    for t in range(T):
        for j in range(d):
            s = (tube.lo[t, j], tube.hi[t, j])
            try:
                out[0, t, j], out[1, t, j] = pontryagin_tighten((x_lo[j], x_hi[j]), s)
                out[2, t, j], out[3, t, j] = pontryagin_tighten((u_lo[j], u_hi[j]), s,
                                                                gain=system.k_gain[j])
            except EmptyTightenedSet as exc:
                raise EmptyTightenedSet(f"slot {t}, dim {j}: {exc}", t, j) from None
    return TightenedSets(*out)


def write_tube_csv(tube: AmbiguityTube, sets: TightenedSets, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "dim", "alpha_lo", "alpha_hi", "z_lo", "z_hi", "v_lo", "v_hi"])
        for t in range(tube.horizon):
            for j in range(tube.dim):
                w.writerow([t, j] + [f"{v:.10g}" for v in (
                    tube.lo[t, j], tube.hi[t, j], sets.z_lo[t, j], sets.z_hi[t, j],
                    sets.v_lo[t, j], sets.v_hi[t, j])])

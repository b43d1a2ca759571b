"""Sample sets, empirical distributions and disturbance datasets."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


def make_rng(seed) -> np.random.Generator:
    """Seeded 64-bit PCG generator; every stochastic routine goes through here."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class SampleSet:
    samples: np.ndarray
    """``(N, dim)`` array of observations."""
    support_lo: np.ndarray
    support_hi: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, float))
        if s.shape[0] == 1 and np.ndim(self.samples) == 1:
            s = s.T
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "support_lo", np.broadcast_to(np.asarray(self.support_lo, float), (s.shape[1],)).copy())
        object.__setattr__(self, "support_hi", np.broadcast_to(np.asarray(self.support_hi, float), (s.shape[1],)).copy())
        if s.shape[0] < 1:
            raise ValueError("a sample set needs at least one sample")
        if np.any(s < self.support_lo - 1e-12) or np.any(s > self.support_hi + 1e-12):
            raise ValueError("sample outside its support box")

    @classmethod
    def from_samples(cls, samples, margin: float = 0.05, support=None) -> "SampleSet":
        """Support is the componentwise sample range widened by ``margin`` of its width."""
        s = np.asarray(samples, float)
        if s.ndim == 1:
            s = s[:, None]
        if support is not None:
            lo, hi = support
        else:
            lo, hi = s.min(axis=0), s.max(axis=0)
            width = hi - lo
            lo, hi = lo - margin * width, hi + margin * width
        return cls(s, lo, hi)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def head(self, n: int) -> "SampleSet":
        return replace(self, samples=self.samples[:n])


@dataclass(frozen=True)
class PointMasses:
    """Finite distribution: ``points[i]`` carries probability ``weights[i]``."""

    points: np.ndarray
    weights: np.ndarray

    def __iter__(self) -> Iterator[tuple]:
        for p, w in zip(self.points.tolist(), self.weights.tolist()):
            yield (p, w)

    def __len__(self) -> int:
        return len(self.weights)


def empirical_distribution(samples) -> PointMasses:
    pts = np.asarray(samples.samples if isinstance(samples, SampleSet) else samples, float)
    if pts.shape[0] == 0:
        raise ValueError("empirical distribution of an empty sample")
    if pts.ndim == 2 and pts.shape[1] == 1:
        pts = pts[:, 0]
    return PointMasses(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]))


def wasserstein_1d(a: PointMasses, b: PointMasses, tol: float = 1e-9) -> float:
    """Exact 1-D optimal transport cost with |x - y| ground cost.

    In one dimension the monotone (quantile) coupling is optimal, so the cost
    equals the integral of ``|F_a - F_b|`` over the real line.
    """
    for d in (a, b):
        if abs(np.sum(d.weights) - 1.0) > tol or np.any(d.weights < 0):
            raise ValueError("point masses must be a probability distribution")
    xa, wa = np.ravel(a.points), np.ravel(a.weights)
    xb, wb = np.ravel(b.points), np.ravel(b.weights)
    grid = np.union1d(xa, xb)
    if grid.size < 2:
        return 0.0
    Fa = np.array([wa[xa <= g].sum() for g in grid[:-1]])
    Fb = np.array([wb[xb <= g].sum() for g in grid[:-1]])
    return float(np.sum(np.abs(Fa - Fb) * np.diff(grid)))


@dataclass(frozen=True)
class WassersteinBall:
    center: SampleSet
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("Wasserstein radius must be non-negative")


@dataclass(frozen=True)
class DisturbanceDataset:
    sequences: np.ndarray
    """``(n, T, d)`` disturbance sequences."""
    support_lo: np.ndarray
    support_hi: np.ndarray
    """``(T, d)`` per-slot support bounds."""

    def __post_init__(self):
        seq = np.asarray(self.sequences, float)
        if seq.ndim == 2:
            seq = seq[:, :, None]
        object.__setattr__(self, "sequences", seq)
        for name in ("support_lo", "support_hi"):
            b = np.asarray(getattr(self, name), float)
            if b.ndim == 1:
                b = b[:, None]
            object.__setattr__(self, name, np.broadcast_to(b, seq.shape[1:]).copy())
        if np.any(seq < self.support_lo - 1e-12) or np.any(seq > self.support_hi + 1e-12):
            raise ValueError("disturbance outside its support")

    @property
    def n(self) -> int:
        return self.sequences.shape[0]

    @property
    def horizon(self) -> int:
        return self.sequences.shape[1]

    @property
    def dim(self) -> int:
        return self.sequences.shape[2]

    def subset(self, idx) -> "DisturbanceDataset":
        return replace(self, sequences=self.sequences[np.asarray(idx)])

    def mean(self) -> np.ndarray:
        return self.sequences.mean(axis=0)


def generate_disturbances(demand_forecast, radius_fraction: float, n: int, seed) -> DisturbanceDataset:
    """i.i.d. uniform draws on ``+-radius * forecast(t)`` for every slot and station."""
    if not 0.0 <= radius_fraction < 1.0:
        raise ValueError("radius_fraction must lie in [0, 1)")
    f = np.asarray(demand_forecast, float)
    if f.ndim == 1:
        f = f[:, None]
    half = radius_fraction * np.abs(f)
    rng = make_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=(n, *f.shape))
    return DisturbanceDataset(u * half, -half, half)


def split_train_test(dataset, fraction: float, seed):
    """Random disjoint split along the first axis; returns ``(train, test)``."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    n = dataset.n
    n_train = int(round(fraction * n))
    if n_train < 1 or n_train >= n:
        raise ValueError(f"split of {n} items at {fraction} leaves an empty side")
    perm = make_rng(seed).permutation(n)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    if isinstance(dataset, DisturbanceDataset):
        return dataset.subset(tr), dataset.subset(te)
    if isinstance(dataset, ResSamples):
        return dataset.subset(tr), dataset.subset(te)
    if isinstance(dataset, SampleSet):
        return replace(dataset, samples=dataset.samples[tr]), replace(dataset, samples=dataset.samples[te])
    arr = np.asarray(dataset)
    return arr[tr], arr[te]


@dataclass(frozen=True)
class ResSamples:
    """Historical RES output: ``(N, T, n_res)`` with the bus of each column."""

    outputs: np.ndarray
    buses: tuple[int, ...]

    @property
    def n(self) -> int:
        return self.outputs.shape[0]

    @property
    def horizon(self) -> int:
        return self.outputs.shape[1]

    def subset(self, idx) -> "ResSamples":
        return replace(self, outputs=self.outputs[np.asarray(idx)])

    def head(self, n: int) -> "ResSamples":
        return replace(self, outputs=self.outputs[:n])

    def forecast(self) -> np.ndarray:
        """Per-slot sample mean, ``(T, n_res)``."""
        return self.outputs.mean(axis=0)

    def errors(self, forecast=None) -> np.ndarray:
        f = self.forecast() if forecast is None else forecast
        return self.outputs - f[None]

    def error_set(self, t: int, margin: float = 0.05, forecast=None) -> SampleSet:
        return SampleSet.from_samples(self.errors(forecast)[:, t, :], margin=margin)


def generate_res_samples(profile, n: int, spread: float, seed, buses: Sequence[int]) -> ResSamples:
    """Uniform residuals around a ``(T, n_res)`` output profile, clipped at zero output."""
    profile = np.asarray(profile, float)
    rng = make_rng(seed)
    noise = rng.uniform(-spread, spread, size=(n, *profile.shape)) * profile[None]
    return ResSamples(np.maximum(profile[None] + noise, 0.0), tuple(buses))


# -- CSV files -------------------------------------------------------------

_COL = re.compile(r"^(?:bus(\d+)_)?t(\d+)$")


def _read_matrix(path) -> tuple[list[tuple[int | None, int]], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        keys = []
        for h in header:
            m = _COL.match(h.strip())
            if not m:
                raise ValueError(f"unrecognised column {h!r} in {path}")
            keys.append((int(m.group(1)) if m.group(1) else None, int(m.group(2))))
        rows = np.array([[float(v) for v in row] for row in reader if row], float)
    return keys, rows


def _columns(keys, rows):
    buses = sorted({b for b, _ in keys}, key=lambda b: -1 if b is None else b)
    T = max(t for _, t in keys) + 1
    out = np.zeros((rows.shape[0], T, len(buses)))
    for c, (b, t) in enumerate(keys):
        out[:, t, buses.index(b)] = rows[:, c]
    return buses, out


def read_res_csv(path) -> ResSamples:
    """One row per sample; columns ``bus{k}_t{t}``."""
    keys, rows = _read_matrix(path)
    buses, out = _columns(keys, rows)
    return ResSamples(out, tuple(buses))


def write_res_csv(samples: ResSamples, path) -> None:
    header = [f"bus{b}_t{t}" for b in samples.buses for t in range(samples.horizon)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in samples.outputs:
            w.writerow([f"{s[t, j]:.10g}" for j in range(len(samples.buses)) for t in range(samples.horizon)])


def read_disturbance_csv(path, support_lo=None, support_hi=None) -> DisturbanceDataset:
    """One row per sequence; columns ``t0..`` (one station) or ``bus{k}_t{t}``.

    Without explicit support the per-slot sample range is used.
    """
    keys, rows = _read_matrix(path)
    _, seq = _columns(keys, rows)
    lo = seq.min(axis=0) if support_lo is None else support_lo
    hi = seq.max(axis=0) if support_hi is None else support_hi
    return DisturbanceDataset(seq, lo, hi)


def write_disturbance_csv(data: DisturbanceDataset, path, buses: Sequence[int] | None = None) -> None:
    T, d = data.horizon, data.dim
    if d == 1 and buses is None:
        header = [f"t{t}" for t in range(T)]
    else:
        buses = list(buses) if buses is not None else list(range(1, d + 1))
        header = [f"bus{b}_t{t}" for b in buses for t in range(T)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in data.sequences:
            w.writerow([f"{s[t, j]:.10g}" for j in range(d) for t in range(T)])


def ensure_path(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    return p

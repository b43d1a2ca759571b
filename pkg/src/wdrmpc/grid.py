"""Radial distribution network model and LinDistFlow physics.

Conventions
-----------
* Buses are numbered ``1..N``; bus 1 is the root (transmission interface).
* Line ``k`` connects ``parent(k)`` to bus ``k``; lines are stored in order of
  their child bus, so line row ``i`` of every line-indexed array belongs to
  bus ``i + 2``.
* Powers are in MW / MVAr.  LinDistFlow divides flows by ``base_mva`` to get
  per-unit quantities, so ``r`` and ``x`` are per-unit impedances.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class NetworkError(ValueError):
    """Raised when an operation needs a valid radial network and did not get one."""


@dataclass(frozen=True)
class Bus:
    id: int
    parent: int | None
    active_load: np.ndarray
    reactive_load: np.ndarray


@dataclass(frozen=True)
class Line:
    child_bus: int
    r: float
    x: float

    @property
    def id(self) -> int:
        return self.child_bus


@dataclass(frozen=True)
class GeneratorSpec:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    cost_pieces: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    """Convex piecewise-linear cost as ``(breakpoint, slope)`` segments,
    breakpoints ascending; the cost is zero at the first breakpoint."""

    def cost_affine(self) -> list[tuple[float, float]]:
        """``(slope, intercept)`` pairs whose maximum is the cost curve."""
        out = []
        value = 0.0
        prev_bp, prev_slope = self.cost_pieces[0]
        for i, (bp, slope) in enumerate(self.cost_pieces):
            if i:
                value += prev_slope * (bp - prev_bp)
            out.append((slope, value - slope * bp))
            prev_bp, prev_slope = bp, slope
        return out

    def cost(self, p) -> np.ndarray:
        p = np.asarray(p, float)
        return np.max([s * p + c for s, c in self.cost_affine()], axis=0)


@dataclass(frozen=True)
class ResUnit:
    bus: int
    forecast: np.ndarray
    error_support: tuple[float, float]


@dataclass(frozen=True)
class ChargingStation:
    bus: int
    soc_min: float
    soc_max: float
    p_ch_max: float
    p_dch_max: float
    demand_forecast: np.ndarray
    battery_cost: float = 45_000.0
    eta_end: float = 0.8
    b1: float = 1e-4
    b2: float = 0.0
    i_c: float = 0.0
    delta_t: float = 1.0
    soc_init: float | None = None

    @property
    def initial_soc(self) -> float:
        if self.soc_init is not None:
            return self.soc_init
        return 0.5 * (self.soc_min + self.soc_max)

    @property
    def degradation_rate(self) -> float:
        """Cost per MWh of battery throughput, ``C_B * B1 * exp(B2 I_c) / (1 - eta_end)``."""
        return self.battery_cost * self.b1 * np.exp(self.b2 * self.i_c) / (1.0 - self.eta_end)


@dataclass(frozen=True)
class RadialNetwork:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[GeneratorSpec, ...] = ()
    res_units: tuple[ResUnit, ...] = ()
    stations: tuple[ChargingStation, ...] = ()
    v0: float = 1.0
    v_min: np.ndarray = field(default_factory=lambda: np.empty(0))
    v_max: np.ndarray = field(default_factory=lambda: np.empty(0))
    base_mva: float = 1.0
    charging_price: np.ndarray | None = None
    name: str = "network"

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def horizon(self) -> int:
        return len(self.buses[0].active_load) if self.buses else 0

    @cached_property
    def parent_index(self) -> np.ndarray:
        """0-based parent position for each bus, -1 for the root."""
        return np.array([-1 if b.parent is None else b.parent - 1 for b in self.buses])

    @cached_property
    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in self.buses]
        for b in self.buses:
            if b.parent is not None:
                kids[b.parent - 1].append(b.id)
        return kids

    @cached_property
    def line_by_child(self) -> dict[int, Line]:
        return {ln.child_bus: ln for ln in self.lines}

    @cached_property
    def topological_order(self) -> list[int]:
        """Bus ids in breadth-first order from the root."""
        order, queue = [], deque([1])
        while queue:
            k = queue.popleft()
            order.append(k)
            queue.extend(self.children[k - 1])
        return order

    def line_r(self) -> np.ndarray:
        return np.array([self.line_by_child[k].r for k in range(2, self.n_bus + 1)])

    def line_x(self) -> np.ndarray:
        return np.array([self.line_by_child[k].x for k in range(2, self.n_bus + 1)])

    def loads(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([b.active_load[t] for b in self.buses]),
                np.array([b.reactive_load[t] for b in self.buses]))

    def res_forecast(self, t: int) -> np.ndarray:
        out = np.zeros(self.n_bus)
        for u in self.res_units:
            out[u.bus - 1] += u.forecast[t]
        return out

    def station_demand(self, t: int) -> np.ndarray:
        out = np.zeros(self.n_bus)
        for s in self.stations:
            out[s.bus - 1] += s.demand_forecast[t]
        return out

    @property
    def res_buses(self) -> list[int]:
        return [u.bus for u in self.res_units]

    @property
    def generator_buses(self) -> list[int]:
        return sorted({g.bus for g in self.generators})

    def has_generator(self, k: int) -> bool:
        return any(g.bus == k for g in self.generators)

    def has_res(self, k: int) -> bool:
        return any(u.bus == k for u in self.res_units)

    def has_station(self, k: int) -> bool:
        return any(s.bus == k for s in self.stations)

    def with_stations(self, buses: Sequence[int]) -> "RadialNetwork":
        """Copy keeping only the stations at ``buses``; missing ones clone the first station."""
        by_bus = {s.bus: s for s in self.stations}
        template = self.stations[0]
        chosen = tuple(by_bus.get(b, replace(template, bus=b)) for b in buses)
        return replace(self, stations=chosen)

    @cached_property
    def path_matrix(self) -> np.ndarray:
        return build_path_matrix(self)

    @cached_property
    def voltage_matrix(self) -> np.ndarray:
        """``B^T R B / (V0 * base)``: voltage response to nodal injections (MW)."""
        B = self.path_matrix
        return B.T @ (self.line_r()[:, None] * B) / (self.v0 * self.base_mva)


def validate_radial(network: RadialNetwork) -> list[str]:
    """Return a list of human-readable violations; empty means valid."""
    problems: list[str] = []
    ids = [b.id for b in network.buses]
    n = len(ids)
    if n == 0:
        return ["network has no buses"]
    if sorted(ids) != list(range(1, n + 1)) or ids != sorted(ids):
        problems.append("bus ids must be 1..N in order")
        return problems
    roots = [b.id for b in network.buses if b.parent is None]
    if roots != [1]:
        problems.append(f"bus 1 must be the only root, found roots {roots}")
    for b in network.buses:
        if b.parent is not None and not 1 <= b.parent <= n:
            problems.append(f"bus {b.id} has dangling parent {b.parent}")
    if problems:
        return problems
    for b in network.buses:
        seen, k = set(), b.id
        while k is not None:
            if k in seen:
                problems.append(f"cycle through bus {b.id}")
                break
            seen.add(k)
            k = network.buses[k - 1].parent
    lines = [ln.child_bus for ln in network.lines]
    if len(lines) != n - 1:
        problems.append(f"expected {n - 1} lines, found {len(lines)}")
    if len(set(lines)) != len(lines):
        problems.append("duplicate line child bus")
    for ln in network.lines:
        if not 2 <= ln.child_bus <= n:
            problems.append(f"line to bus {ln.child_bus} references a non-existent or root bus")
        if ln.r < 0 or ln.x < 0:
            problems.append(f"line to bus {ln.child_bus} has negative impedance")
    horizon = network.horizon
    for b in network.buses:
        if len(b.active_load) != horizon or len(b.reactive_load) != horizon:
            problems.append(f"bus {b.id} load series length differs from horizon {horizon}")
    for g in network.generators:
        if not 1 <= g.bus <= n:
            problems.append(f"generator references missing bus {g.bus}")
        if g.p_min > g.p_max or g.q_min > g.q_max:
            problems.append(f"generator at bus {g.bus} has inverted bounds")
        slopes = [s for _, s in g.cost_pieces]
        bps = [bp for bp, _ in g.cost_pieces]
        if any(np.diff(slopes) < 0) or any(np.diff(bps) <= 0):
            problems.append(f"generator at bus {g.bus} has a non-convex cost")
    for u in network.res_units:
        if not 1 <= u.bus <= n:
            problems.append(f"RES unit references missing bus {u.bus}")
        lo, hi = u.error_support
        if not lo <= 0 <= hi:
            problems.append(f"RES unit at bus {u.bus} error support must contain 0")
        if len(u.forecast) != horizon:
            problems.append(f"RES unit at bus {u.bus} forecast length differs from horizon")
    for s in network.stations:
        if not 1 <= s.bus <= n:
            problems.append(f"station references missing bus {s.bus}")
        if not 0 <= s.soc_min < s.soc_max:
            problems.append(f"station at bus {s.bus} needs 0 <= soc_min < soc_max")
        if s.p_ch_max <= 0 or s.p_dch_max <= 0:
            problems.append(f"station at bus {s.bus} needs positive power limits")
        if not 0 < s.eta_end < 1:
            problems.append(f"station at bus {s.bus} needs 0 < eta_end < 1")
        if len(s.demand_forecast) != horizon:
            problems.append(f"station at bus {s.bus} demand length differs from horizon")
    if len(network.v_min) != n or len(network.v_max) != n:
        problems.append("voltage bounds must have one entry per bus")
    elif np.any(network.v_min > network.v_max):
        problems.append("voltage lower bound above upper bound")
    if network.charging_price is not None and len(network.charging_price) != horizon:
        problems.append("charging price length differs from horizon")
    return problems


def require_valid(network: RadialNetwork) -> None:
    problems = validate_radial(network)
    if problems:
        raise NetworkError("; ".join(problems))


def build_path_matrix(network: RadialNetwork) -> np.ndarray:
    """``B[i, j] = 1`` iff line ``i`` (child bus ``i+2``) lies on the root-to-bus-``j+1`` path."""
    require_valid(network)
    n = network.n_bus
    B = np.zeros((n - 1, n))
    parent = network.parent_index
    for j in range(n):
        k = j
        while parent[k] >= 0:
            B[k - 1, j] = 1.0
            k = parent[k]
    return B


def _line_vector(network: RadialNetwork, flows, label: str) -> np.ndarray:
    n = network.n_bus
    if isinstance(flows, Mapping):
        missing = [k for k in range(2, n + 1) if k not in flows]
        if missing:
            raise KeyError(f"missing {label} flow for lines {missing}")
        return np.array([flows[k] for k in range(2, n + 1)], float)
    arr = np.asarray(flows, float)
    if arr.shape[-1] != n - 1:
        raise ValueError(f"{label} flows need {n - 1} entries, got {arr.shape[-1]}")
    return arr


def lindistflow_voltage(network: RadialNetwork, P, Q, v_root: float) -> np.ndarray:
    """Bus voltages from line flows by the LinDistFlow recursion, root first."""
    P = _line_vector(network, P, "active")
    Q = _line_vector(network, Q, "reactive")
    r, x = network.line_r(), network.line_x()
    scale = network.v0 * network.base_mva
    V = np.empty(network.n_bus)
    V[0] = v_root
    for k in network.topological_order[1:]:
        i = k - 2
        V[k - 1] = V[network.parent_index[k - 1]] - (r[i] * P[i] + x[i] * Q[i]) / scale
    return V


def check_alpha(alpha, tol: float = 1e-9) -> np.ndarray:
    alpha = np.asarray(alpha, float)
    if np.any(alpha < -tol) or np.any(alpha > 1 + tol) or abs(alpha.sum() - 1.0) > tol:
        raise ValueError("participation factors must lie on the unit simplex")
    return alpha


def voltage_sensitivity(network: RadialNetwork, alpha, k: int) -> np.ndarray:
    """Linear map from nodal forecast errors to the voltage deviation at bus ``k``.

    With ``M = B^T R B / V0`` the deviation of all voltages is
    ``M (xi - alpha * sum(xi))``; row ``k`` gives ``mu[j] = M[k, j] - M[k] @ alpha``.
    """
    alpha = check_alpha(alpha)
    row = network.voltage_matrix[k - 1]
    return row - row @ alpha


def power_balance_residual(network: RadialNetwork, action, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus active and reactive balance residuals of a single-slot action.

    ``action`` exposes per-bus ``p_gen``, ``q_gen``, ``p_cs`` and per-line
    ``line_p``, ``line_q`` arrays; ``t`` indexes the network's load series.
    """
    n = network.n_bus
    p_flow = np.concatenate([[0.0], np.asarray(action.line_p, float)])
    q_flow = np.concatenate([[0.0], np.asarray(action.line_q, float)])
    p_load, q_load = network.loads(t)
    p_res = getattr(action, "p_res", None)
    if p_res is None:
        p_res = network.res_forecast(t)
    child_p = np.zeros(n)
    child_q = np.zeros(n)
    parent = network.parent_index
    for k in range(1, n):
        child_p[parent[k]] += p_flow[k]
        child_q[parent[k]] += q_flow[k]
    res_p = p_flow - (child_p - np.asarray(action.p_gen) - p_res + np.asarray(action.p_cs) + p_load)
    res_q = q_flow - (child_q - np.asarray(action.q_gen) + q_load)
    return res_p, res_q


# -- file format -----------------------------------------------------------

def network_from_dict(data: dict) -> RadialNetwork:
    horizon = data.get("horizon")
    buses = []
    for b in data["buses"]:
        p = np.asarray(b.get("p_load", [0.0] * (horizon or 1)), float)
        q = np.asarray(b.get("q_load", np.zeros_like(p)), float)
        buses.append(Bus(int(b["id"]), b.get("parent"), p, q))
    buses.sort(key=lambda b: b.id)
    if buses and buses[0].id == 1 and buses[0].parent is not None:
        raise NetworkError("bus 1 must be the root")
    lines = tuple(Line(int(ln["child_bus"]), float(ln["r"]), float(ln["x"])) for ln in data["lines"])
    gens = tuple(
        GeneratorSpec(int(g["bus"]), float(g["p_min"]), float(g["p_max"]), float(g["q_min"]),
                      float(g["q_max"]), tuple((float(a), float(s)) for a, s in g.get("cost", [[0.0, 0.0]])))
        for g in data.get("generators", []))
    res = tuple(
        ResUnit(int(u["bus"]), np.asarray(u["forecast"], float), tuple(map(float, u.get("error_support", [0.0, 0.0]))))
        for u in data.get("res_units", []))
    stations = tuple(
        ChargingStation(
            bus=int(s["bus"]), soc_min=float(s["soc_min"]), soc_max=float(s["soc_max"]),
            p_ch_max=float(s["p_ch_max"]), p_dch_max=float(s["p_dch_max"]),
            demand_forecast=np.asarray(s["demand_forecast"], float),
            battery_cost=float(s.get("battery_cost", 45_000.0)), eta_end=float(s.get("eta_end", 0.8)),
            b1=float(s.get("b1", 1e-4)), b2=float(s.get("b2", 0.0)), i_c=float(s.get("i_c", 0.0)),
            delta_t=float(s.get("delta_t", 1.0)), soc_init=s.get("soc_init"))
        for s in data.get("stations", []))
    n = len(buses)
    vb = data.get("voltage_bounds", {"v_min": 0.95, "v_max": 1.05})
    v_min = np.broadcast_to(np.asarray(vb["v_min"], float), (n,)).copy()
    v_max = np.broadcast_to(np.asarray(vb["v_max"], float), (n,)).copy()
    price = data.get("charging_price")
    return RadialNetwork(
        buses=tuple(buses), lines=lines, generators=gens, res_units=res, stations=stations,
        v0=float(data.get("v0", 1.0)), v_min=v_min, v_max=v_max,
        base_mva=float(data.get("base_mva", 1.0)),
        charging_price=None if price is None else np.asarray(price, float),
        name=data.get("name", "network"))


def network_to_dict(network: RadialNetwork) -> dict:
    def arr(a):
        return [float(v) for v in np.asarray(a)]

    return {
        "name": network.name, "base_mva": network.base_mva, "v0": network.v0,
        "horizon": network.horizon,
        "voltage_bounds": {"v_min": arr(network.v_min), "v_max": arr(network.v_max)},
        "buses": [{"id": b.id, "parent": b.parent, "p_load": arr(b.active_load),
                   "q_load": arr(b.reactive_load)} for b in network.buses],
        "lines": [{"child_bus": ln.child_bus, "r": ln.r, "x": ln.x} for ln in network.lines],
        "generators": [{"bus": g.bus, "p_min": g.p_min, "p_max": g.p_max, "q_min": g.q_min,
                        "q_max": g.q_max, "cost": [list(p) for p in g.cost_pieces]}
                       for g in network.generators],
        "res_units": [{"bus": u.bus, "forecast": arr(u.forecast), "error_support": list(u.error_support)}
                      for u in network.res_units],
        "stations": [{"bus": s.bus, "soc_min": s.soc_min, "soc_max": s.soc_max,
                      "p_ch_max": s.p_ch_max, "p_dch_max": s.p_dch_max,
                      "demand_forecast": arr(s.demand_forecast), "battery_cost": s.battery_cost,
                      "eta_end": s.eta_end, "b1": s.b1, "b2": s.b2, "i_c": s.i_c,
                      "delta_t": s.delta_t, "soc_init": s.soc_init} for s in network.stations],
        "charging_price": None if network.charging_price is None else arr(network.charging_price),
    }


def load_network(path) -> RadialNetwork:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


def save_network(network: RadialNetwork, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(network), indent=1))

"""Synthetic benchmark networks and sample files.

``case3`` is a toy chain for unit tests.  ``case38`` and ``case94`` mimic the
shape of common radial test feeders: a long main feeder with laterals,
distributed generators, PV-like RES units and charging stations.  Impedances,
loads and prices are synthetic.  Running ``python3 -m wdrmpc.datasets``
rewrites the bundled files in ``wdrmpc/data``.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .grid import (Bus, ChargingStation, GeneratorSpec, Line, RadialNetwork, ResUnit,
                   load_network, save_network)
from .uncertainty import (DisturbanceDataset, ResSamples, generate_disturbances,
                          generate_res_samples, make_rng, read_disturbance_csv, read_res_csv,
                          write_disturbance_csv, write_res_csv)

HORIZON = 24

# hourly shapes, peak normalised to 1
LOAD_SHAPE = np.array([0.62, 0.58, 0.55, 0.54, 0.56, 0.62, 0.72, 0.83, 0.90, 0.93, 0.95, 0.96,
                       0.95, 0.94, 0.93, 0.94, 0.97, 1.00, 0.99, 0.95, 0.88, 0.80, 0.72, 0.66])
PV_SHAPE = np.array([0, 0, 0, 0, 0, 0.03, 0.12, 0.28, 0.46, 0.63, 0.77, 0.86,
                     0.90, 0.87, 0.78, 0.64, 0.46, 0.27, 0.10, 0.02, 0, 0, 0, 0], float)
EV_SHAPE = np.array([0.35, 0.30, 0.25, 0.22, 0.22, 0.28, 0.45, 0.65, 0.80, 0.75, 0.65, 0.60,
                     0.60, 0.62, 0.65, 0.72, 0.85, 0.98, 1.00, 0.92, 0.80, 0.65, 0.52, 0.42])
PRICE = np.array([48, 42, 40, 41, 45, 60, 95, 140, 165, 150, 120, 105,
                  98, 96, 104, 125, 170, 230, 250, 210, 160, 115, 80, 60], float)

ROOT_COST = ((0.0, 55.0), (2.0, 70.0), (4.0, 110.0))
DG_COST = ((0.0, 30.0), (0.2, 45.0), (0.35, 65.0))


def _station(bus: int, demand_peak: float = 0.05) -> ChargingStation:
    return ChargingStation(bus=bus, soc_min=0.0, soc_max=0.3, p_ch_max=0.1, p_dch_max=0.1,
                           demand_forecast=demand_peak * EV_SHAPE, battery_cost=45_000.0,
                           eta_end=0.8, b1=1e-4, b2=0.0, i_c=0.0, delta_t=1.0)


def _build(name: str, parents: list[int | None], loads: np.ndarray, r: np.ndarray, x: np.ndarray,
           dg_buses, res_buses, station_buses, res_peak: float, base_mva: float,
           v_bounds=(0.94, 1.06), dg_pmax: float = 0.5) -> RadialNetwork:
    n = len(parents)
    buses = tuple(Bus(k + 1, parents[k], loads[k] * LOAD_SHAPE, 0.5 * loads[k] * LOAD_SHAPE)
                  for k in range(n))
    lines = tuple(Line(k, float(r[k - 2]), float(x[k - 2])) for k in range(2, n + 1))
    gens = [GeneratorSpec(1, 0.0, 10.0, -5.0, 5.0, ROOT_COST)]
    gens += [GeneratorSpec(b, 0.0, dg_pmax, -0.3, 0.3, DG_COST) for b in dg_buses]
    res = tuple(ResUnit(b, res_peak * PV_SHAPE, (-0.3 * res_peak, 0.3 * res_peak)) for b in res_buses)
    stations = tuple(_station(b) for b in station_buses)
    return RadialNetwork(buses, lines, tuple(gens), res, stations, v0=1.0,
                         v_min=np.full(n, v_bounds[0]), v_max=np.full(n, v_bounds[1]),
                         base_mva=base_mva, charging_price=PRICE.copy(), name=name)


def case3() -> RadialNetwork:
    """Chain 1-2-3: grid supply at 1, station and DG at 2, RES at 3."""
    loads = np.array([0.0, 0.2, 0.3])
    return _build("case3", [None, 1, 2], loads, np.array([0.01, 0.01]), np.array([0.005, 0.005]),
                  [2], [3], [2], res_peak=0.2, base_mva=1.0)


def _feeder(n: int, main: int, laterals: list[tuple[int, int]]) -> list[int | None]:
    """Parents for a main feeder ``1..main`` plus laterals ``(attach bus, length)``."""
    parents: list[int | None] = [None] + list(range(1, main))
    nxt = main + 1
    for attach, length in laterals:
        prev = attach
        for _ in range(length):
            parents.append(prev)
            prev = nxt
            nxt += 1
    if len(parents) != n:
        raise AssertionError(f"feeder layout gives {len(parents)} buses, wanted {n}")
    return parents


def case38() -> RadialNetwork:
    parents = _feeder(38, 18, [(2, 4), (3, 3), (6, 8), (15, 5)])
    rng = make_rng(38)
    loads = rng.uniform(0.04, 0.12, 38)
    loads[0] = 0.0
    r = rng.uniform(0.002, 0.008, 37)
    x = 0.6 * r
    return _build("case38", parents, loads, r, x, [2, 6, 12], [6, 16, 20, 25, 28], [2],
                  res_peak=0.3, base_mva=10.0)


CASE94_STATION_BUSES = (2, 6, 10, 12, 19, 20)


def case94(stations=(2, 6)) -> RadialNetwork:
    parents = _feeder(94, 30, [(2, 8), (5, 10), (9, 12), (14, 9), (20, 10), (25, 15)])
    rng = make_rng(94)
    loads = rng.uniform(0.02, 0.08, 94)
    loads[0] = 0.0
    r = rng.uniform(0.001, 0.005, 93)
    x = 0.6 * r
    return _build("case94", parents, loads, r, x, [2, 6, 10, 12, 19, 20, 26], [6, 10, 15, 19, 25],
                  list(stations), res_peak=0.3, base_mva=10.0)


def res_samples_for(network: RadialNetwork, n: int, seed, spread: float = 0.3) -> ResSamples:
    profile = np.stack([u.forecast for u in network.res_units], axis=1)
    return generate_res_samples(profile, n, spread, seed, network.res_buses)


def disturbances_for(network: RadialNetwork, n: int, seed, radius: float = 0.2) -> DisturbanceDataset:
    """Charging-demand disturbances, uniform on ``+-radius`` times the demand forecast."""
    forecast = np.stack([s.demand_forecast for s in network.stations], axis=1)
    return generate_disturbances(forecast, radius, n, seed)


# -- bundled files ---------------------------------------------------------

def data_dir() -> Path:
    return Path(str(resources.files("wdrmpc") / "data"))


def bundled(name: str) -> Path:
    p = data_dir() / name
    if not p.exists():
        raise FileNotFoundError(f"no bundled file {name!r}")
    return p


def load_case(name: str) -> RadialNetwork:
    return load_network(bundled(f"{name}.json"))


def load_res(name: str) -> ResSamples:
    return read_res_csv(bundled(f"{name}_res.csv"))


def load_disturbances(name: str) -> DisturbanceDataset:
    return read_disturbance_csv(bundled(f"{name}_w.csv"))


def write_bundle(target: Path | None = None) -> list[Path]:
    target = Path(target) if target else data_dir()
    target.mkdir(parents=True, exist_ok=True)
    out = []
    for name, net in (("case3", case3()), ("case38", case38()), ("case94", case94())):
        save_network(net, target / f"{name}.json")
        write_res_csv(res_samples_for(net, 200, seed=1), target / f"{name}_res.csv")
        w = disturbances_for(net, 500, seed=2)
        write_disturbance_csv(w, target / f"{name}_w.csv",
                              buses=[s.bus for s in net.stations] if len(net.stations) > 1 else None)
        out += [target / f"{name}{suffix}" for suffix in (".json", "_res.csv", "_w.csv")]
    return out


if __name__ == "__main__":
    for p in write_bundle():
        print(p)

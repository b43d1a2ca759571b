"""Baselines, out-of-sample reliability evaluation and parameter sweeps."""
from __future__ import annotations

import csv
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .datasets import (CASE94_STATION_BUSES, bundled, data_dir, disturbances_for, res_samples_for)
from .grid import RadialNetwork, load_network, power_balance_residual
from .lp import solve
from .scheduler import (ControlAction, RiskWeights, ScheduleResult, build_stage2_problem,
                        committed_costs, solve_receding_horizon)
from .tube import (AmbiguityTube, ClosedLoopSystem, TightenedSets, assemble_tube, error_support,
                   propagate_error_samples, quantile_tube, stage1_tube_bounds)
from .uncertainty import (DisturbanceDataset, ResSamples, make_rng, read_disturbance_csv,
                          read_res_csv, split_train_test)

log = logging.getLogger(__name__)

METHODS = ("WdrMpc", "SaaMpc", "NormalMpc", "StaticDro")


@dataclass
class ExperimentSpec:
    network: str = "case38"
    """Bundled case name or path to a network JSON file."""
    res_samples: str | None = None
    disturbances: str | None = None
    method: str = "WdrMpc"
    epsilon: float = 1e-3
    beta: float = 0.95
    mu1: float = 1.0
    mu2: float = 1.0
    mu_tube: float = 1e3
    rho: float = 0.5
    window: int = 12
    iterations: int = 12
    n_static: int = 30
    n_dynamic: int = 500
    n_res_test: int = 200
    disturbance_radius: float = 0.2
    rounds: int = 20
    tests_per_round: int = 500
    seed: int = 0
    exact_dual: bool = False
    stations: tuple[int, ...] | None = None
    solver: str = "highs"
    epsilons: list[float] = field(default_factory=lambda: [0.0, 0.001, 0.002, 0.005])
    betas: list[float] = field(default_factory=lambda: [0.98, 0.95, 0.90])
    sample_sizes: list[int] = field(default_factory=lambda: [10, 30, 50, 100])
    station_counts: list[int] = field(default_factory=lambda: [1, 2, 3, 4])

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        for name in ("epsilons", "betas", "sample_sizes", "station_counts"):
            if not getattr(self, name):
                raise ValueError(f"sweep axis {name} is empty")
        for p in (self.res_samples, self.disturbances):
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(p)
        if self.iterations < 1 or self.window < 1:
            raise ValueError("window and iterations must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        self.weights  # validates the risk parameters

    @property
    def weights(self) -> RiskWeights:
        return RiskWeights(self.mu1, self.mu2, self.beta, self.epsilon, self.mu_tube)

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentSpec":
        data = json.loads(Path(path).read_text())
        data.update({k: v for k, v in overrides.items() if v is not None})
        if "stations" in data and data["stations"] is not None:
            data["stations"] = tuple(data["stations"])
        return cls(**data)


@dataclass
class ExperimentData:
    network: RadialNetwork
    res_train: ResSamples | None
    res_test: ResSamples | None
    w_train: DisturbanceDataset
    w_forecast: np.ndarray
    """``(T, n_station)`` demand forecast that scales the disturbance support."""


def _seed(base: int, *keys: int) -> int:
    return int(np.random.SeedSequence([base, *keys]).generate_state(1)[0])


def resolve_network(name: str) -> RadialNetwork:
    p = Path(name)
    if p.suffix == ".json" and p.exists():
        return load_network(p)
    if (data_dir() / f"{name}.json").exists():
        return load_network(bundled(f"{name}.json"))
    raise FileNotFoundError(f"network {name!r} is neither a file nor a bundled case")


def prepare(spec: ExperimentSpec) -> ExperimentData:
    net = resolve_network(spec.network)
    if spec.stations is not None:
        net = net.with_stations(spec.stations)
    if not net.stations:
        raise ValueError("experiments need at least one charging station")
    res_train = res_test = None
    if net.res_units:
        if spec.res_samples:
            pool = read_res_csv(spec.res_samples)
            frac = min(spec.n_static / pool.n, 0.9) if pool.n > 1 else 0.5
            res_train, res_test = split_train_test(pool, frac, _seed(spec.seed, 1))
        else:
            res_train = res_samples_for(net, spec.n_static, _seed(spec.seed, 1))
            res_test = res_samples_for(net, spec.n_res_test, _seed(spec.seed, 2))
    forecast = np.stack([s.demand_forecast for s in net.stations], axis=1)
    if spec.disturbances:
        w = read_disturbance_csv(spec.disturbances)
        if w.dim != len(net.stations):
            raise ValueError(f"disturbance file has {w.dim} stations, network has {len(net.stations)}")
    else:
        w = disturbances_for(net, spec.n_dynamic, _seed(spec.seed, 3), spec.disturbance_radius)
    return ExperimentData(net, res_train, res_test, w, forecast)


@dataclass
class MethodRun:
    method: str
    schedule: ScheduleResult
    tube: AmbiguityTube
    sets: TightenedSets
    offline_time: float
    """Stage-1 wall-clock (tube synthesis)."""

    @property
    def online_times(self) -> list[float]:
        return self.schedule.solve_times


def _boxes(net: RadialNetwork):
    st = net.stations
    return ((np.array([s.soc_min for s in st]), np.array([s.soc_max for s in st])),
            (np.array([-s.p_dch_max for s in st]), np.array([s.p_ch_max for s in st])))


def build_tube(spec: ExperimentSpec, data: ExperimentData, method: str | None = None):
    """Stage 1 for ``method``: returns ``(system, tube, sets, seconds)``."""
    method = method or spec.method
    net = data.network
    S = len(net.stations)
    system = ClosedLoopSystem.integrator(S, spec.rho)
    w = data.w_train
    start = time.perf_counter()
    if method == "WdrMpc":
        e = propagate_error_samples(system, w)
        lo, hi = error_support(system, w.support_lo, w.support_hi)
        tube = stage1_tube_bounds(e, lo, hi, spec.epsilon, spec.mu_tube, spec.beta,
                                  "exact" if spec.exact_dual else "accelerated", spec.solver)
    elif method == "SaaMpc":
        tube = quantile_tube(propagate_error_samples(system, w), spec.beta)
    elif method == "NormalMpc":
        tube = AmbiguityTube.zero(w.horizon + 1, S)
    elif method == "StaticDro":
        # one-step bounds on the raw disturbance, no accumulation through the dynamics
        shifted = np.concatenate([np.zeros((w.n, 1, S)), w.sequences], axis=1)
        lo = np.concatenate([np.zeros((1, S)), w.support_lo])
        hi = np.concatenate([np.zeros((1, S)), w.support_hi])
        tube = stage1_tube_bounds(shifted, lo, hi, spec.epsilon, spec.mu_tube, spec.beta,
                                  "exact" if spec.exact_dual else "accelerated", spec.solver)
        system = None
    else:
        raise ValueError(f"unknown method {method!r}")
    elapsed = time.perf_counter() - start
    x_box, u_box = _boxes(net)
    if system is None:
        k0 = ClosedLoopSystem(np.full(S, 0.5), np.ones(S), np.zeros(S))
        sets = assemble_tube(k0, tube, x_box, u_box)
    else:
        sets = assemble_tube(system, tube, x_box, u_box)
    return system, tube, sets, elapsed


def run_method(spec: ExperimentSpec, data: ExperimentData | None = None, method: str | None = None,
               realized=None) -> MethodRun:
    """Stage 1 plus the receding-horizon loop for one method."""
    data = data or prepare(spec)
    method = method or spec.method
    system, tube, sets, offline = build_tube(spec, data, method)
    weights = spec.weights
    if method == "SaaMpc":
        weights = replace(weights, epsilon=0.0)
    stage2 = "exact" if spec.exact_dual else "accelerated"
    net = data.network
    if method == "StaticDro":
        start = time.perf_counter()
        prob = build_stage2_problem(net, sets, data.res_train, weights, 0, spec.iterations,
                                    method=stage2)
        t_build = time.perf_counter()
        sol = solve(prob.lp, spec.solver)
        t_solve = time.perf_counter() - t_build
        if not sol.ok:
            from .scheduler import InfeasibleWindow
            raise InfeasibleWindow(0, sol.status)
        actions = [prob.action(sol, tau) for tau in range(prob.window)]
        S = len(net.stations)
        z = np.array([sol.x[prob.v["soc"][tau]] for tau in range(prob.window + 1)])
        vnom = np.array([a.p_b for a in actions])
        sched = ScheduleResult(actions, z, vnom, z.copy(), vnom.copy(), 0, np.zeros(S),
                               [sol.objective], [prob.cost(sol)], [t_solve],
                               committed_costs(net, actions))
        return MethodRun(method, sched, tube, sets, offline)
    offset = None
    if method == "NormalMpc":
        mean = data.w_train.mean()
        offset = np.zeros((net.horizon, mean.shape[1]))
        offset[:mean.shape[0]] = mean
    sched = solve_receding_horizon(net, data.res_train, sets, weights, spec.window, spec.iterations,
                                   system, realized=realized, method=stage2, solver=spec.solver,
                                   soc_offset=offset)
    return MethodRun(method, sched, tube, sets, offline)


# -- out-of-sample evaluation ----------------------------------------------

FAMILIES = ("soc", "p_b", "voltage", "generator")


@dataclass
class ReliabilityReport:
    method: str
    reliability: np.ndarray
    """Per round fraction of tests with no violation."""
    violations: dict[str, np.ndarray]
    """Per family, per round count of tests violating that family."""
    tests_per_round: int
    solve_times: list[float] = field(default_factory=list)

    @property
    def rounds(self) -> int:
        return len(self.reliability)

    @property
    def mean(self) -> float:
        return float(np.mean(self.reliability))

    @property
    def std(self) -> float:
        return float(np.std(self.reliability))

    @property
    def violation_rate(self) -> np.ndarray:
        return 1.0 - self.reliability

    def summary(self) -> dict:
        return {"method": self.method, "rounds": self.rounds, "tests_per_round": self.tests_per_round,
                "reliability_mean": self.mean, "reliability_std": self.std,
                "reliability": self.reliability.tolist(),
                "violations": {k: v.tolist() for k, v in self.violations.items()},
                "median_solve_time": float(np.median(self.solve_times)) if self.solve_times else None}


def simulate_policy(schedule: ScheduleResult, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Realized states ``(n, T+1, S)`` and inputs ``(n, T, S)`` under ``u = v + K (x - z)``."""
    z, v, k = schedule.nominal_soc, schedule.nominal_input, schedule.k_gain
    T = v.shape[0]
    w = np.asarray(w, float)
    if w.ndim == 2:
        w = w[:, :, None]
    if w.shape[1] < T or w.shape[2] != z.shape[1]:
        raise ValueError(f"test disturbances {w.shape} do not cover the policy horizon {T}")
    n = w.shape[0]
    x = np.empty((n, T + 1, z.shape[1]))
    u = np.empty((n, T, z.shape[1]))
    x[:, 0] = z[0]
    for t in range(T):
        u[:, t] = v[t] + k * (x[:, t] - z[t])
        x[:, t + 1] = x[:, t] + u[:, t] + w[:, t]
    return x, u


def violation_flags(network: RadialNetwork, schedule: ScheduleResult, w: np.ndarray,
                    xi: np.ndarray | None, tol: float = 1e-7) -> dict[str, np.ndarray]:
    """Per-test boolean violation flags of each constraint family.

    ``xi`` holds ``(n, T, n_res)`` realized RES forecast errors, or ``None``.
    """
    x, u = simulate_policy(schedule, w)
    st = network.stations
    lo = np.array([s.soc_min for s in st])
    hi = np.array([s.soc_max for s in st])
    plo = np.array([-s.p_dch_max for s in st])
    phi = np.array([s.p_ch_max for s in st])
    T = u.shape[1]
    n = x.shape[0]
    flags = {
        "soc": ((x[:, 1:] < lo - tol) | (x[:, 1:] > hi + tol)).any(axis=(1, 2)),
        "p_b": ((u < plo - tol) | (u > phi + tol)).any(axis=(1, 2)),
        "voltage": np.zeros(n, bool),
        "generator": np.zeros(n, bool),
    }
    if xi is not None and network.res_units:
        res_idx = np.array([b - 1 for b in network.res_buses])
        M = network.voltage_matrix
        gens = network.generators
        p_lo = np.array([g.p_min for g in gens])
        p_hi = np.array([g.p_max for g in gens])
        for t in range(T):
            a = schedule.actions[t]
            e = xi[:, t, :]
            total = e.sum(axis=1)
            pg = a.gen_output[None, :] - total[:, None] * a.gen_alpha[None, :]
            flags["generator"] |= ((pg < p_lo - tol) | (pg > p_hi + tol)).any(axis=1)
            full = np.zeros((n, network.n_bus))
            full[:, res_idx] = e
            dv = (full - total[:, None] * a.alpha[None, :]) @ M.T
            vt = a.voltage[None, :] + dv
            flags["voltage"] |= ((vt[:, 1:] < network.v_min[1:] - tol)
                                 | (vt[:, 1:] > network.v_max[1:] + tol)).any(axis=1)
    return flags


def evaluate_reliability(network: RadialNetwork, run: MethodRun | ScheduleResult, forecast: np.ndarray,
                         res_test: ResSamples | None, res_forecast: np.ndarray | None,
                         rounds: int, tests: int, seed: int, radius: float = 0.2) -> ReliabilityReport:
    """Monte-Carlo reliability of a committed policy over ``rounds`` independent batches.

    Each test draws a fresh disturbance sequence, uniform on ``+-radius``
    times the demand forecast, and a RES outcome picked from the test set.
    """
    schedule = run.schedule if isinstance(run, MethodRun) else run
    method = run.method if isinstance(run, MethodRun) else "policy"
    T = schedule.nominal_input.shape[0]
    half = radius * np.abs(forecast[:T])
    rel = np.zeros(rounds)
    counts = {k: np.zeros(rounds, int) for k in FAMILIES}
    for r in range(rounds):
        rng = make_rng(_seed(seed, 100 + r))
        w = rng.uniform(-1.0, 1.0, size=(tests, *half.shape)) * half
        xi = None
        if res_test is not None and res_forecast is not None:
            pick = rng.integers(0, res_test.n, size=tests)
            xi = res_test.outputs[pick, :T] - res_forecast[None, :T]
        flags = violation_flags(network, schedule, w, xi)
        any_v = np.zeros(tests, bool)
        for k in FAMILIES:
            counts[k][r] = int(flags[k].sum())
            any_v |= flags[k]
        rel[r] = 1.0 - any_v.mean()
    return ReliabilityReport(method, rel, counts, tests, list(schedule.solve_times))


def evaluate_run(spec: ExperimentSpec, data: ExperimentData, run: MethodRun,
                 rounds: int | None = None, tests: int | None = None) -> ReliabilityReport:
    res_fc = data.res_train.forecast() if data.res_train is not None else None
    return evaluate_reliability(data.network, run, data.w_forecast, data.res_test, res_fc,
                                rounds or spec.rounds, tests or spec.tests_per_round,
                                _seed(spec.seed, 7), spec.disturbance_radius)


def physics_residuals(network: RadialNetwork, actions: list[ControlAction]) -> dict[str, float]:
    """Worst balance residual, simplex error and LinDistFlow matrix-identity error."""
    from .grid import lindistflow_voltage

    bal = simplex = volt = 0.0
    B = network.path_matrix
    r, x = network.line_r(), network.line_x()
    scale = network.v0 * network.base_mva
    for a in actions:
        rp, rq = power_balance_residual(network, a, a.t)
        bal = max(bal, float(np.abs(rp).max()), float(np.abs(rq).max()))
        simplex = max(simplex, abs(float(a.gen_alpha.sum()) - 1.0) if a.gen_alpha.size else 0.0)
        matrix_v = network.v0 - B.T @ (r * a.line_p + x * a.line_q) / scale
        volt = max(volt, float(np.abs(matrix_v - a.voltage).max()),
                   float(np.abs(lindistflow_voltage(network, a.line_p, a.line_q, network.v0)
                                - a.voltage).max()))
    return {"balance": bal, "simplex": simplex, "voltage_identity": volt}


# -- sweeps ----------------------------------------------------------------

def _median_time(fn, repeats: int = 5) -> float:
    out = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        out.append(time.perf_counter() - start)
    return float(np.median(out))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(["NA" if (isinstance(v, float) and not np.isfinite(v)) or v is None else v
                        for v in row])
    return path


def _cell(fn, label: str):
    try:
        return fn()
    except Exception as exc:  # a failed cell becomes NA in the table
        log.warning("sweep cell %s failed: %s", label, exc)
        return None


def machine_fingerprint() -> dict:
    return {"python": platform.python_version(), "machine": platform.machine(),
            "processor": platform.processor(), "system": platform.system()}


def stage2_timing(spec: ExperimentSpec, data: ExperimentData, n_samples: int, method: str,
                  repeats: int = 5) -> tuple[float, int, int, float]:
    """Median LP solve time, constraint count, row count and objective of the first window."""
    res = data.res_train
    if res is not None and res.n < n_samples:
        res = res_samples_for(data.network, n_samples, _seed(spec.seed, 1))
    res = None if res is None else res.head(n_samples)
    system, tube, sets, _ = build_tube(spec, data, "WdrMpc")
    prob = build_stage2_problem(data.network, sets, res, spec.weights, 0, spec.window, method=method)
    sol = solve(prob.lp, spec.solver)
    t = _median_time(lambda: solve(prob.lp, spec.solver), repeats)
    return t, prob.lp.constraint_count, prob.lp.row_count, sol.objective


def sweep_and_emit(spec: ExperimentSpec, out_dir, tables=("1", "2", "3", "4", "fig2", "fig3")) -> list[Path]:
    """Run the requested sweeps and write one CSV per table plus a JSON summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    data = prepare(spec)

    if "1" in tables:
        rows = []
        for eps in spec.epsilons:
            s = replace(spec, epsilon=eps)

            def cell(s=s):
                _, tube, _, _ = build_tube(s, data, "WdrMpc")
                prob = build_stage2_problem(data.network, None, data.res_train, s.weights, 0, s.window)
                sol = solve(prob.lp, s.solver)
                reserve = float(np.mean([sol.x[prob.v[k]].sum(axis=1).mean()
                                         for k in ("dG", "uG", "dV", "uV")]))
                return tube.radius(), reserve
            got = _cell(cell, f"epsilon={eps}")
            rows.append([eps, *(got if got else (None, None))])
        written.append(_write_csv(out / "table1_epsilon.csv",
                                  ["epsilon", "dynamic_tube_radius", "static_reserve_d_plus_u"], rows))

    if "2" in tables or "fig2" in tables:
        rows, fig = [], []
        for n in spec.sample_sizes:
            acc = _cell(lambda n=n: stage2_timing(spec, data, n, "accelerated"), f"N={n} acc")
            exa = _cell(lambda n=n: stage2_timing(spec, data, n, "exact"), f"N={n} exact")
            rows.append([n, exa[0] if exa else None, acc[0] if acc else None,
                         exa[1] if exa else None, acc[1] if acc else None])
            fig.append([n, exa[3] if exa else None, acc[3] if acc else None])
        if "2" in tables:
            written.append(_write_csv(out / "table2_timing.csv",
                                      ["sample_size", "exact_seconds", "accelerated_seconds",
                                       "exact_constraints", "accelerated_constraints"], rows))
        if "fig2" in tables:
            written.append(_write_csv(out / "fig2_cost_vs_samples.csv",
                                      ["sample_size", "exact_objective", "accelerated_objective"], fig))

    if "3" in tables:
        rows = []
        for beta in spec.betas:
            s = replace(spec, beta=beta)

            def cell(s=s):
                run = run_method(s, data, "WdrMpc")
                rep = evaluate_run(s, data, run)
                return rep.mean, run.schedule.costs["total"]
            got = _cell(cell, f"beta={beta}")
            rows.append([beta, *(got if got else (None, None))])
        written.append(_write_csv(out / "table3_beta.csv", ["beta", "reliability", "system_cost"], rows))

    if "4" in tables:
        rows = []
        base = resolve_network(spec.network)
        candidates = CASE94_STATION_BUSES if base.n_bus >= 94 else tuple(s.bus for s in base.stations)
        for count in spec.station_counts:
            if count > len(candidates):
                log.warning("station count %d exceeds the %d candidate buses", count, len(candidates))
                rows.append([count, None, None, None])
                continue
            s = replace(spec, stations=tuple(candidates[:count]))

            def cell(s=s):
                d = prepare(s)
                run = run_method(s, d, "WdrMpc")
                offline = _median_time(lambda: build_tube(s, d, "WdrMpc"))
                rep = evaluate_run(s, d, run)
                return offline, float(np.median(run.online_times)), rep.mean
            got = _cell(cell, f"stations={count}")
            rows.append([count, *(got if got else (None, None, None))])
        written.append(_write_csv(out / "table4_stations.csv",
                                  ["stations", "offline_seconds", "online_seconds", "reliability"], rows))

    if "fig3" in tables:
        rows = []
        reports = {}
        for m in METHODS:
            rep = _cell(lambda m=m: evaluate_run(spec, data, run_method(spec, data, m)), m)
            if rep is not None:
                reports[m] = rep
                for r, v in enumerate(rep.reliability):
                    rows.append([m, r, v, 1.0 - v])
        written.append(_write_csv(out / "fig3_reliability.csv",
                                  ["method", "round", "reliability", "violation_rate"], rows))
        summary = {"spec": {k: v for k, v in asdict(spec).items()},
                   "machine": machine_fingerprint(),
                   "reports": {m: r.summary() for m, r in reports.items()}}
        p = out / "summary.json"
        p.write_text(json.dumps(summary, indent=1, default=str))
        written.append(p)
    return written

"""Stage-2 window problem and the receding-horizon loop.

Each window is one LP over slots ``t0 .. t0 + T_c - 1`` containing the
LinDistFlow network, generator participation factors, the nominal battery
recursion restricted to tube-tightened sets, the operating cost and a
Wasserstein-robust CVaR penalty for generator and voltage limits under the
RES forecast error.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dro import add_accelerated, add_exact_dual, cvar_max_affine, two_sided_spec
from .grid import ChargingStation, RadialNetwork, require_valid
from .lp import INF, LinearProgram, LinExpr, LpSolution, add_abs_epigraph, solve
from .tube import ClosedLoopSystem, TightenedSets
from .uncertainty import ResSamples, SampleSet, WassersteinBall


class InfeasibleWindow(RuntimeError):
    def __init__(self, t0: int, status, detail: str = ""):
        super().__init__(f"window starting at slot {t0} is {status}{': ' + detail if detail else ''}")
        self.t0 = t0
        self.status = status


@dataclass(frozen=True)
class RiskWeights:
    mu1: float = 1.0
    mu2: float = 1.0
    beta: float = 0.95
    epsilon: float = 1e-3
    mu_tube: float = 1e3
    pin_omega: bool = True
    """Hold the CVaR thresholds at zero (see README); ``False`` frees them."""

    def __post_init__(self):
        if min(self.mu1, self.mu2, self.epsilon, self.mu_tube) < 0:
            raise ValueError("risk weights must be non-negative")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")


@dataclass
class ControlAction:
    """Decisions of a single slot; per-bus arrays are indexed by ``bus - 1``."""

    t: int
    p_gen: np.ndarray
    q_gen: np.ndarray
    alpha: np.ndarray
    voltage: np.ndarray
    line_p: np.ndarray
    line_q: np.ndarray
    p_b: np.ndarray
    """Per station."""
    soc: np.ndarray
    """Nominal state of charge at the start of the slot, per station."""
    p_cs: np.ndarray
    p_res: np.ndarray
    d_g: np.ndarray
    u_g: np.ndarray
    d_v: np.ndarray
    u_v: np.ndarray
    gen_output: np.ndarray = field(default_factory=lambda: np.empty(0))
    """Per generator record, in network order."""
    gen_alpha: np.ndarray = field(default_factory=lambda: np.empty(0))


def degradation_cost_terms(lp: LinearProgram, station: ChargingStation, p_b_cols) -> LinExpr:
    """Add ``C_B B1 e^{B2 Ic} sum |P_B| dt / (1 - eta_end)`` to the objective; returns it."""
    if station.eta_end >= 1.0:
        raise ValueError("eta_end must be below 1")
    rate = station.degradation_rate * station.delta_t
    total = LinExpr()
    for c in np.atleast_1d(p_b_cols):
        t = add_abs_epigraph(lp, LinExpr.var(int(c)), name=f"deg{lp.n_vars}")
        lp.add_objective_coefs(t, rate)
        total = total + LinExpr.var(t, rate)
    return total


@dataclass
class Stage2Problem:
    lp: LinearProgram
    network: RadialNetwork
    t0: int
    slots: list[int]
    v: dict[str, np.ndarray]
    p_res: np.ndarray
    """``(T_c, n_bus)`` RES forecast used in the balance rows."""
    cost_expr: LinExpr
    method: str

    @property
    def window(self) -> int:
        return len(self.slots)

    def action(self, sol: LpSolution, tau: int = 0) -> ControlAction:
        net, v, x = self.network, self.v, sol.x
        n = net.n_bus
        t = self.slots[tau]
        gen_bus = np.array([g.bus - 1 for g in net.generators], int)
        pg, qg, al = x[v["pg"][tau]], x[v["qg"][tau]], x[v["alpha"][tau]]
        p_gen, q_gen, alpha = np.zeros(n), np.zeros(n), np.zeros(n)
        np.add.at(p_gen, gen_bus, pg)
        np.add.at(q_gen, gen_bus, qg)
        np.add.at(alpha, gen_bus, al)
        d_g, u_g = np.zeros(n), np.zeros(n)
        np.add.at(d_g, gen_bus, x[v["dG"][tau]])
        np.add.at(u_g, gen_bus, x[v["uG"][tau]])
        d_v, u_v = np.zeros(n), np.zeros(n)
        d_v[1:], u_v[1:] = x[v["dV"][tau]], x[v["uV"][tau]]
        p_b = x[v["pb"][tau]] if net.stations else np.zeros(0)
        soc = x[v["soc"][tau]] if net.stations else np.zeros(0)
        p_cs = net.station_demand(t)
        for s, st in enumerate(net.stations):
            p_cs[st.bus - 1] += p_b[s]
        return ControlAction(t, p_gen, q_gen, alpha, x[v["V"][tau]], x[v["P"][tau]], x[v["Q"][tau]],
                             p_b, soc, p_cs, self.p_res[tau].copy(), d_g, u_g, d_v, u_v, pg.copy(),
                             al.copy())

    def cost(self, sol: LpSolution) -> float:
        return self.cost_expr.value(sol.x)


def _res_error_sets(res: ResSamples | None, network: RadialNetwork):
    if res is None or not network.res_units:
        return None
    if tuple(res.buses) != tuple(network.res_buses):
        raise ValueError(f"RES samples cover buses {res.buses}, network has {network.res_buses}")
    return res.forecast(), res.errors()


def build_stage2_problem(network: RadialNetwork, sets: TightenedSets | None, res: ResSamples | None,
                         weights: RiskWeights, t0: int, window: int, soc0=None,
                         method: str = "accelerated", soc_offset=None,
                         support_margin: float = 0.05, res_support=None) -> Stage2Problem:
    """Assemble the window LP for slots ``t0 .. t0 + window - 1`` (truncated at the data horizon).

    ``sets`` holds the tightened state and input intervals indexed by absolute
    slot; ``None`` means no tightening.  ``soc_offset`` is a ``(T, n_station)``
    deterministic term added to the nominal recursion.  ``res_support`` maps a
    slot to an explicit ``(lo, hi)`` support box for the RES errors.
    """
    if method not in ("accelerated", "exact"):
        raise ValueError(f"unknown reformulation {method!r}")
    require_valid(network)
    H = network.horizon
    slots = list(range(t0, min(t0 + window, H)))
    if not slots:
        raise ValueError(f"window start {t0} is beyond the data horizon {H}")
    T = len(slots)
    n, G, S = network.n_bus, len(network.generators), len(network.stations)
    lp = LinearProgram(f"stage2_t{t0}")
    v: dict[str, np.ndarray] = {}
    gens = network.generators
    v["pg"] = lp.add_vars("pg", (T, G), lo=[g.p_min for g in gens], hi=[g.p_max for g in gens])
    v["qg"] = lp.add_vars("qg", (T, G), lo=[g.q_min for g in gens], hi=[g.q_max for g in gens])
    v["alpha"] = lp.add_vars("alpha", (T, G), lo=0.0, hi=1.0)
    v["P"] = lp.add_vars("P", (T, n - 1), lo=-INF)
    v["Q"] = lp.add_vars("Q", (T, n - 1), lo=-INF)
    v["V"] = lp.add_vars("V", (T, n), lo=-INF)
    lp.set_bounds(v["V"][:, 0], lo=network.v0, hi=network.v0)
    v["dG"] = lp.add_vars("dG", (T, G), lo=0.0)
    v["uG"] = lp.add_vars("uG", (T, G), lo=0.0)
    v["dV"] = lp.add_vars("dV", (T, n - 1), lo=0.0)
    v["uV"] = lp.add_vars("uV", (T, n - 1), lo=0.0)
    cost = LinExpr()

    # batteries
    if S:
        if soc0 is None:
            soc0 = [s.initial_soc for s in network.stations]
        soc0 = np.asarray(soc0, float)
        v["pb"] = lp.add_vars("pb", (T, S), lo=-INF)
        v["soc"] = lp.add_vars("soc", (T + 1, S), lo=-INF)
        for s, st in enumerate(network.stations):
            lp.set_bounds(v["soc"][0, s], lo=soc0[s], hi=soc0[s])
            for tau, t in enumerate(slots):
                if sets is None:
                    vl, vh = -st.p_dch_max, st.p_ch_max
                    zl, zh = st.soc_min, st.soc_max
                else:
                    if t + 1 >= sets.horizon:
                        raise ValueError(f"tightened sets end before slot {t + 1}")
                    vl, vh = sets.v_lo[t, s], sets.v_hi[t, s]
                    zl, zh = sets.z_lo[t + 1, s], sets.z_hi[t + 1, s]
                lp.set_bounds(v["pb"][tau, s], lo=vl, hi=vh)
                lp.set_bounds(v["soc"][tau + 1, s], lo=zl, hi=zh)
                off = 0.0 if soc_offset is None else float(soc_offset[t, s])
                lp.add_constraint(LinExpr.var(v["soc"][tau + 1, s]) - LinExpr.var(v["soc"][tau, s])
                                  - LinExpr.var(v["pb"][tau, s]), "==", off)
            price = network.charging_price
            if price is not None:
                lp.add_objective_coefs(v["pb"][:, s], price[slots])
                for tau, t in enumerate(slots):
                    cost = cost + LinExpr.var(v["pb"][tau, s], price[t])
            cost = cost + degradation_cost_terms(lp, st, v["pb"][:, s])

    # generator cost
    for g, gen in enumerate(gens):
        pieces = gen.cost_affine()
        for tau in range(T):
            col = int(v["pg"][tau, g])
            if len(pieces) == 1:
                s0, c0 = pieces[0]
                lp.add_objective_coefs(col, s0)
                lp.obj_const += c0
                cost = cost + LinExpr.var(col, s0) + c0
            else:
                e = lp.add_var(f"fg[{tau},{g}]", lo=-INF, obj=1.0)
                for s0, c0 in pieces:
                    lp.add_constraint(LinExpr.var(e) - LinExpr.var(col, s0), ">=", c0, tag="epigraph")
                cost = cost + LinExpr.var(e)

    # network physics per slot
    r, xl = network.line_r(), network.line_x()
    scale = network.v0 * network.base_mva
    gen_at: dict[int, list[int]] = {}
    for g, gen in enumerate(gens):
        gen_at.setdefault(gen.bus, []).append(g)
    st_at = {st.bus: s for s, st in enumerate(network.stations)}
    forecast_err = _res_error_sets(res, network)
    p_res = np.zeros((T, n))
    for tau, t in enumerate(slots):
        if forecast_err is not None:
            for j, b in enumerate(network.res_buses):
                p_res[tau, b - 1] += forecast_err[0][t, j]
        else:
            p_res[tau] = network.res_forecast(t)
        pl, ql = network.loads(t)
        demand = network.station_demand(t)
        for k in range(1, n + 1):
            ep, eq = LinExpr(), LinExpr()
            if k > 1:
                ep = ep + LinExpr.var(v["P"][tau, k - 2])
                eq = eq + LinExpr.var(v["Q"][tau, k - 2])
            for c in network.children[k - 1]:
                ep = ep - LinExpr.var(v["P"][tau, c - 2])
                eq = eq - LinExpr.var(v["Q"][tau, c - 2])
            for g in gen_at.get(k, []):
                ep = ep + LinExpr.var(v["pg"][tau, g])
                eq = eq + LinExpr.var(v["qg"][tau, g])
            if k in st_at:
                ep = ep - LinExpr.var(v["pb"][tau, st_at[k]])
            lp.add_constraint(ep, "==", demand[k - 1] - p_res[tau, k - 1] + pl[k - 1], name=f"bal_p[{tau},{k}]")
            lp.add_constraint(eq, "==", ql[k - 1], name=f"bal_q[{tau},{k}]")
        for k in range(2, n + 1):
            parent = network.buses[k - 1].parent
            i = k - 2
            lp.add_constraint(LinExpr.var(v["V"][tau, k - 1]) - LinExpr.var(v["V"][tau, parent - 1])
                              + LinExpr.var(v["P"][tau, i], r[i] / scale)
                              + LinExpr.var(v["Q"][tau, i], xl[i] / scale), "==", 0.0)
            lp.add_constraint(LinExpr.var(v["V"][tau, k - 1]) - LinExpr.var(v["dV"][tau, i]), ">=",
                              network.v_min[k - 1])
            lp.add_constraint(LinExpr.var(v["V"][tau, k - 1]) + LinExpr.var(v["uV"][tau, i]), "<=",
                              network.v_max[k - 1])
        if G:
            lp.add_rows(v["alpha"][tau][None, :], 1.0, "==", [1.0])
        for g, gen in enumerate(gens):
            lp.add_constraint(LinExpr.var(v["pg"][tau, g]) - LinExpr.var(v["dG"][tau, g]), ">=", gen.p_min)
            lp.add_constraint(LinExpr.var(v["pg"][tau, g]) + LinExpr.var(v["uG"][tau, g]), "<=", gen.p_max)

    # reserve regularizer (d, u >= 0, so |d + u| = d + u)
    for key in ("dG", "uG", "dV", "uV"):
        lp.add_objective_coefs(v[key], weights.mu2)

    # distributionally robust CVaR penalties
    if forecast_err is not None and weights.mu1 > 0:
        errors = forecast_err[1]
        res_idx = [b - 1 for b in network.res_buses]
        gen_idx = [g.bus - 1 for g in gens]
        M = network.voltage_matrix
        adder = add_accelerated if method == "accelerated" else add_exact_dual
        for tau, t in enumerate(slots):
            if res_support is not None:
                lo, hi = res_support(t)
                sample = SampleSet(errors[:, t, :], lo, hi)
            else:
                sample = SampleSet.from_samples(errors[:, t, :], margin=support_margin)
            ball = WassersteinBall(sample, weights.epsilon)
            terms = []
            for g in range(G):
                a = LinExpr.var(v["alpha"][tau, g])
                terms.append((f"g{g}", [-a] * len(res_idx), v["dG"][tau, g], v["uG"][tau, g]))
            for k in range(2, n + 1):
                row = M[k - 1]
                mix = LinExpr({int(v["alpha"][tau, g]): row[gen_idx[g]] for g in range(G)
                               if row[gen_idx[g]] != 0.0})
                slope = [row[j] - mix for j in res_idx]
                if all(not e.coefs and e.const == 0.0 for e in slope):
                    continue
                terms.append((f"v{k}", slope, v["dV"][tau, k - 2], v["uV"][tau, k - 2]))
            for label, slope, d, u in terms:
                om1 = om2 = 0.0
                if not weights.pin_omega:
                    om1 = LinExpr.var(lp.add_var(f"w1_{label}[{tau}]", lo=-INF))
                    om2 = LinExpr.var(lp.add_var(f"w2_{label}[{tau}]", lo=-INF))
                spec = two_sided_spec(weights.beta, slope, LinExpr.var(d), LinExpr.var(u),
                                      omega1=om1, omega2=om2, exclusive=True)
                adder(lp, cvar_max_affine(spec), ball, scale=weights.mu1, name=f"risk_{label}[{tau}]")
    return Stage2Problem(lp, network, t0, slots, v, p_res, cost, method)


@dataclass
class ScheduleResult:
    actions: list[ControlAction]
    nominal_soc: np.ndarray
    """``(T_l + 1, n_station)`` nominal trajectory ``z``."""
    nominal_input: np.ndarray
    realized_soc: np.ndarray
    realized_input: np.ndarray
    clamp_events: int
    k_gain: np.ndarray
    objectives: list[float]
    window_costs: list[float]
    solve_times: list[float]
    costs: dict[str, float]

    @property
    def objective(self) -> float:
        """Mean optimal window objective over the receding-horizon iterations."""
        return float(np.mean(self.objectives)) if self.objectives else float("nan")


def committed_costs(network: RadialNetwork, actions: list[ControlAction]) -> dict[str, float]:
    gen = charging = degradation = 0.0
    for a in actions:
        gen += sum(float(g.cost(p)) for g, p in zip(network.generators, a.gen_output))
        if network.charging_price is not None:
            charging += float(network.charging_price[a.t] * a.p_b.sum())
        degradation += sum(st.degradation_rate * st.delta_t * abs(p)
                           for st, p in zip(network.stations, a.p_b))
    return {"generation": gen, "charging": charging, "degradation": degradation,
            "total": gen + charging + degradation}


def solve_receding_horizon(network: RadialNetwork, res: ResSamples | None, sets: TightenedSets | None,
                           weights: RiskWeights, window: int, iterations: int,
                           system: ClosedLoopSystem | None = None, realized=None,
                           method: str = "accelerated", solver: str = "highs",
                           soc_offset=None, res_support=None) -> ScheduleResult:
    """Run the receding-horizon loop for ``iterations`` slots starting at slot 0.

    Each iteration solves one window, commits its first-slot action, advances
    the nominal state ``z`` to the planned next value and the realized state
    by ``x += v + K (x - z) + w``.  A realized state outside the battery
    limits is clamped and counted.
    """
    S = len(network.stations)
    k_gain = np.zeros(S) if system is None else np.broadcast_to(system.k_gain, (S,)).astype(float)
    w = np.zeros((iterations, S)) if realized is None else np.asarray(realized, float).reshape(-1, S)
    z = np.zeros((iterations + 1, S))
    x = np.zeros((iterations + 1, S))
    z[0] = x[0] = [s.initial_soc for s in network.stations]
    v_nom = np.zeros((iterations, S))
    u_real = np.zeros((iterations, S))
    lo = np.array([s.soc_min for s in network.stations])
    hi = np.array([s.soc_max for s in network.stations])
    actions, objectives, window_costs, times = [], [], [], []
    clamps = 0
    for t0 in range(iterations):
        prob = build_stage2_problem(network, sets, res, weights, t0, window, soc0=z[t0],
                                    method=method, soc_offset=soc_offset, res_support=res_support)
        start = time.perf_counter()
        sol = solve(prob.lp, solver)
        times.append(time.perf_counter() - start)
        if not sol.ok:
            raise InfeasibleWindow(t0, sol.status)
        act = prob.action(sol, 0)
        actions.append(act)
        objectives.append(sol.objective)
        window_costs.append(prob.cost(sol))
        if S:
            v_nom[t0] = act.p_b
            z[t0 + 1] = sol.x[prob.v["soc"][1]]
            u_real[t0] = act.p_b + k_gain * (x[t0] - z[t0])
            nxt = x[t0] + u_real[t0] + (w[t0] if t0 < len(w) else 0.0)
            off = lo - 1e-9 > nxt
            off |= nxt > hi + 1e-9
            clamps += int(off.sum())
            x[t0 + 1] = np.clip(nxt, lo, hi)
    return ScheduleResult(actions, z, v_nom, x, u_real, clamps, k_gain, objectives, window_costs,
                          times, committed_costs(network, actions))

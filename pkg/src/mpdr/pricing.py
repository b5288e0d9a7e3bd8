"""Single-level retail pricing over the feeder's HVAC population.

Each unit's meta-prediction network is unrolled inside the program with
the shared hourly price as its control input, so predicted demand and the
price are optimized jointly: the classic bi-level pricing/DR pair
collapses into one NLP.  Peak-window voltage-deviation rows couple the
predicted demand to the grid through the sensitivity matrices and the
phase-conversion map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gridflow import Feeder, Sensitivities, conversion_matrix, voltage_deviation
from .narx import NarxParams, nmse
from .nlp import NlpOptions, NlpProblem, NlpSolution, chain_clip_ramps, solve
from .whitebox import DayTail, implied_output_bounds, rollout, seed_variables, unroll

PREACT_BOUND = 1e4


@dataclass(frozen=True)
class UnitGroup:
    """Units sharing one meta-prediction model, environment, and tails.

    Such units respond identically to a common price (their predicted
    demand is pinned by the same equations), so one unrolled network
    represents them all; bus_counts says how many physical units sit at
    each HVAC bus.
    """

    label: str
    mp: NarxParams
    env_stacked: np.ndarray          # (n_hours, 3)
    tails: DayTail
    bus_counts: np.ndarray           # (n_hvac_buses,) units of this group per bus

    def __post_init__(self):
        object.__setattr__(self, "env_stacked", np.asarray(self.env_stacked, dtype=float))
        object.__setattr__(self, "bus_counts", np.asarray(self.bus_counts, dtype=float))

    @property
    def total_units(self) -> float:
        return float(self.bus_counts.sum())


@dataclass(frozen=True)
class PricingProblem:
    groups: list[UnitGroup]
    wholesale: np.ndarray            # L^t, $/kWh
    c_min: np.ndarray
    c_max: np.ndarray
    ramp_neg: float                  # C_N <= 0, $/kWh per h
    ramp_pos: float                  # C_P >= 0
    feeder: Feeder
    sens: list[Sensitivities]        # one per hour
    conventional: np.ndarray         # (n_hvac_buses, n_hours) kW
    dv_max: float
    peak_window: tuple[int, int]     # (t_ps, t_pe), 1-based inclusive
    c_prev: float | None = None      # previous-day closing price for the hour-1 ramp
    dt: float = 1.0

    def __post_init__(self):
        for name in ("wholesale", "c_min", "c_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        h = len(self.wholesale)
        if len(self.c_min) != h or len(self.c_max) != h:
            raise ValueError("price cap profiles must cover every hour")
        if np.any(self.c_min > self.c_max + 1e-12):
            raise ValueError("caps must satisfy c_min <= c_max per hour")
        if not (self.ramp_neg <= 0.0 <= self.ramp_pos):
            raise ValueError("price ramps must satisfy C_N <= 0 <= C_P")
        if self.dv_max <= 0:
            raise ValueError("dv_max must be positive")
        t_ps, t_pe = self.peak_window
        if not (1 <= t_ps <= t_pe <= h):
            raise ValueError(f"peak window must satisfy 1 <= t_ps <= t_pe <= {h}")
        if len(self.sens) != h:
            raise ValueError("need one sensitivity matrix per hour")
        if not self.groups:
            raise ValueError("at least one unit group is required")
        n_hv = len(self.feeder.hvac_buses)
        if self.conventional.shape != (n_hv, h):
            raise ValueError(f"conventional loads must be ({n_hv}, {h})")
        for g in self.groups:
            if g.env_stacked.shape != (h, 3):
                raise ValueError(f"group {g.label}: environment must cover {h} hours")
            if len(g.bus_counts) != n_hv:
                raise ValueError(f"group {g.label}: bus_counts must cover the HVAC buses")

    @property
    def horizon(self) -> int:
        return len(self.wholesale)

    @classmethod
    def from_unit_map(cls, mp_params: dict, envs: dict, tails: dict, feeder: Feeder,
                      **kwargs) -> "PricingProblem":
        """Build from per-(unit, bus) maps, collapsing units that share one
        (model, environment, tails) triple into a single group."""
        n_hv = len(feeder.hvac_buses)
        bus_pos = {b: i for i, b in enumerate(feeder.hvac_buses)}
        groups: dict[int, tuple] = {}
        counts: dict[int, np.ndarray] = {}
        for (h, v), params in mp_params.items():
            key = (id(params), id(envs[h, v]), id(tails[h, v]))
            kid = hash(key)
            if kid not in groups:
                groups[kid] = (params, envs[h, v], tails[h, v])
                counts[kid] = np.zeros(n_hv)
            counts[kid][bus_pos[v]] += 1
        built = [UnitGroup(label=f"group{i}", mp=p, env_stacked=np.asarray(e), tails=t,
                           bus_counts=counts[kid])
                 for i, (kid, (p, e, t)) in enumerate(groups.items())]
        return cls(groups=built, feeder=feeder, **kwargs)


@dataclass
class PricingSolution:
    c_opt: np.ndarray
    p_pred: dict[str, np.ndarray]    # per-group predicted unit demand, kW
    dv: np.ndarray                   # (n_bus, n_hours) linearized deviations, pu
    j_d: float
    binding_hours: list[int]
    diagnostics: NlpSolution


def dso_profit(c: np.ndarray, l: np.ndarray, p_all: np.ndarray, dt: float = 1.0) -> float:
    """Profit of selling p_all (summed HVAC kW per hour) bought at l, sold at c."""
    c = np.asarray(c, dtype=float)
    l = np.asarray(l, dtype=float)
    p_all = np.asarray(p_all, dtype=float)
    if not (c.shape == l.shape == p_all.shape):
        raise ValueError("profit inputs must have equal length")
    return float(np.sum((c - l) * p_all) * dt)


def _start_prices(problem: PricingProblem) -> list[np.ndarray]:
    h = problem.horizon
    lo, hi = problem.c_min, problem.c_max
    precool = np.where(np.arange(1, h + 1) <= max(1, h // 3), lo, hi)
    return [lo + 0.05 * (hi - lo),
            lo + 0.9 * (hi - lo),
            precool.astype(float),
            hi.astype(float),
            0.5 * (lo + hi)]


def _assemble(problem: PricingProblem):
    h = problem.horizon
    groups = problem.groups
    c_cols = np.arange(h)
    n_total = h + sum(h * (g.mp.arch.n_hidden + 1) for g in groups)
    nets = []
    base = h
    for g in groups:
        net = unroll(g.mp, h, g.tails, g.env_stacked, control="shared",
                     shared_ctrl_cols=c_cols, base=base, n_vars_total=n_total)
        base += net.n_own_vars
        nets.append(net)

    bounds = np.empty((n_total, 2))
    bounds[:, 0], bounds[:, 1] = -PREACT_BOUND, PREACT_BOUND
    bounds[c_cols, 0] = problem.c_min
    bounds[c_cols, 1] = problem.c_max
    for g, net in zip(groups, nets):
        lo, hi = implied_output_bounds(g.mp)
        bounds[net.out_cols, 0] = lo
        bounds[net.out_cols, 1] = hi

    counts = np.array([g.total_units for g in groups])
    # objective normalized to O(1) so penalty terms stay well conditioned
    ref = float(np.sum((problem.c_max - problem.wholesale)
                       * (counts @ np.array([[max(implied_output_bounds(g.mp)[1], 1.0)] * h
                                             for g in groups]))) * problem.dt)
    scale = max(1.0, abs(ref))

    def objective(x):
        margin = x[c_cols] - problem.wholesale
        p_groups = np.array([x[net.out_cols] for net in nets])  # (n_groups, h)
        total = counts @ p_groups
        f = -float(margin @ total) * problem.dt / scale
        grad = np.zeros(n_total)
        grad[c_cols] = -total * problem.dt / scale
        for gi, net in enumerate(nets):
            grad[net.out_cols] = -counts[gi] * margin * problem.dt / scale
        return f, grad

    def eq(x):
        r = np.concatenate([net.residuals(x) for net in nets])
        jac = np.vstack([net.jacobian_dense(x) for net in nets])
        return r, jac

    def eq_resid(x):
        return np.concatenate([net.residuals(x) for net in nets])

    row_slices = []
    row0 = 0
    for net in nets:
        row_slices.append(slice(row0, row0 + net.n_residuals))
        row0 += net.n_residuals

    def eq_vjp(x, w):
        out = np.zeros(n_total)
        for net, sl in zip(nets, row_slices):
            out += net.jac_t_vec(x, w[sl])
        return out

    # price-ramp rows: diff_t = (C_t - C_{t-1})/dt must lie in [R_N, R_P]
    d_rows = []
    d_offs = []
    if problem.c_prev is not None:
        row = np.zeros(n_total)
        row[c_cols[0]] = 1.0 / problem.dt
        d_rows.append(row)
        d_offs.append(-problem.c_prev / problem.dt)
    for t in range(1, h):
        row = np.zeros(n_total)
        row[c_cols[t]] = 1.0 / problem.dt
        row[c_cols[t - 1]] = -1.0 / problem.dt
        d_rows.append(row)
        d_offs.append(0.0)
    d_jac = np.asarray(d_rows) if d_rows else np.zeros((0, n_total))
    d_off = np.asarray(d_offs)
    ramp_jac = np.vstack([d_jac, -d_jac])
    ramp_off = np.concatenate([d_off - problem.ramp_pos, -d_off + problem.ramp_neg])

    # peak-window voltage rows, pruned where the band is provably unreachable
    hv_idx = problem.feeder.hvac_index()
    kw2pu = 1.0 / (1000.0 * problem.feeder.s_base_mva)
    count_mat = np.stack([g.bus_counts for g in groups], axis=1) * kw2pu  # (n_hvac, n_groups)
    t_ps, t_pe = problem.peak_window
    v_rows = []
    v_offs = []
    for t in range(t_ps, t_pe + 1):
        s_bus = problem.sens[t - 1].s_vp[:, hv_idx]          # (n_bus, n_hvac)
        dv_conv = s_bus @ (problem.conventional[:, t - 1] * kw2pu)
        coef = s_bus @ count_mat                             # (n_bus, n_groups)
        out_mag = np.array([max(abs(bounds[net.out_cols[t - 1], 0]),
                                abs(bounds[net.out_cols[t - 1], 1])) for net in nets])
        worst = np.abs(dv_conv) + np.abs(coef) @ out_mag
        for n in range(problem.feeder.n_bus):
            if worst[n] <= 0.98 * problem.dv_max:
                continue
            up = np.zeros(n_total)
            for gi, net in enumerate(nets):
                up[net.out_cols[t - 1]] = coef[n, gi]
            v_rows.append(up)
            v_offs.append(dv_conv[n] - problem.dv_max)
            v_rows.append(-up)
            v_offs.append(-dv_conv[n] - problem.dv_max)
    if v_rows:
        ineq_jac = np.vstack([ramp_jac, np.asarray(v_rows)])
        ineq_off = np.concatenate([ramp_off, np.asarray(v_offs)])
    else:
        ineq_jac, ineq_off = ramp_jac, ramp_off

    def ineq(x):
        return ineq_jac @ x + ineq_off, ineq_jac

    starts = []
    for c0 in _start_prices(problem):
        c0 = chain_clip_ramps(c0, problem.c_min, problem.c_max,
                              problem.ramp_neg * problem.dt, problem.ramp_pos * problem.dt,
                              problem.c_prev)
        x0 = np.zeros(n_total)
        x0[c_cols] = c0
        for net in nets:
            seed_variables(net, x0, c0)
        starts.append(np.clip(x0, bounds[:, 0], bounds[:, 1]))

    # natural magnitudes: price ~ cap level, preactivations ~ sigmoid active
    # zone, demand ~ unit rating scale
    var_scale = np.full(n_total, 4.0)
    var_scale[c_cols] = max(float(problem.c_max.max()), 0.05)
    for net in nets:
        var_scale[net.out_cols] = max(float(np.mean(np.abs(bounds[net.out_cols, 1]))) / 2.0,
                                      5.0)

    nlp = NlpProblem(n_vars=n_total, bounds=bounds, objective=objective, eq=eq,
                     ineq=ineq, starts=starts,
                     eq_resid=eq_resid, eq_vjp=eq_vjp,
                     ineq_resid=lambda x: ineq_jac @ x + ineq_off,
                     ineq_vjp=lambda x, w: ineq_jac.T @ w,
                     var_scale=var_scale)
    return nlp, nets, c_cols


def build_pricing(problem: PricingProblem) -> NlpProblem:
    return _assemble(problem)[0]


def solve_pricing(problem: PricingProblem, opts: NlpOptions | None = None) -> PricingSolution:
    """Solve for the optimal price; returns the polished price, per-group
    predicted demand, linearized deviations for every hour, and profit."""
    opts = opts or NlpOptions(tol_feas=3e-7)
    nlp, nets, c_cols = _assemble(problem)
    sol = solve(nlp, opts)
    c = np.clip(sol.x[c_cols], problem.c_min, problem.c_max)
    c = chain_clip_ramps(c, problem.c_min, problem.c_max,
                         problem.ramp_neg * problem.dt, problem.ramp_pos * problem.dt,
                         problem.c_prev)
    p_pred = {}
    for g, net in zip(problem.groups, nets):
        p_pred[g.label] = rollout(g.mp, g.tails, g.env_stacked, c)
    dv, totals = deviations_from_dispatch(problem, p_pred)
    j_d = dso_profit(c, problem.wholesale, total_demand(problem, p_pred), problem.dt)
    t_ps, t_pe = problem.peak_window
    peak_abs = np.abs(dv[:, t_ps - 1:t_pe]).max(axis=0)
    binding = [t_ps + i for i, m in enumerate(peak_abs) if m >= 0.98 * problem.dv_max]
    if sol.status == "infeasible":
        worst_flat = int(np.argmax(np.abs(dv[:, t_ps - 1:t_pe])))
        n, t_off = np.unravel_index(worst_flat, dv[:, t_ps - 1:t_pe].shape)
        sol.message += (f"; pricing infeasible, largest deviation at bus "
                        f"{problem.feeder.bus_ids[int(n)]} hour {t_ps + int(t_off)}")
    return PricingSolution(c_opt=c, p_pred=p_pred, dv=dv, j_d=j_d,
                           binding_hours=binding, diagnostics=sol)


def total_demand(problem: PricingProblem, p_per_group: dict[str, np.ndarray]) -> np.ndarray:
    """Summed HVAC demand (kW per hour) over all units."""
    h = problem.horizon
    total = np.zeros(h)
    for g in problem.groups:
        total += g.total_units * np.asarray(p_per_group[g.label])
    return total


def deviations_from_dispatch(problem: PricingProblem,
                             p_per_group: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Linearized per-bus deviations and per-HVAC-bus totals for a dispatch."""
    h = problem.horizon
    totals = problem.conventional.astype(float).copy()
    for g in problem.groups:
        totals = totals + np.outer(g.bus_counts, np.asarray(p_per_group[g.label]))
    b_mat = conversion_matrix(problem.feeder)
    dv = np.zeros((problem.feeder.n_bus, h))
    for t in range(h):
        dv[:, t] = voltage_deviation(problem.sens[t], b_mat, totals[:, t],
                                     problem.feeder.s_base_mva)
    return dv, totals


def verify_dispatch(problem: PricingProblem, solution: PricingSolution,
                    dr_results: dict[str, np.ndarray],
                    tol: float = 0.005) -> dict:
    """Compare meta-predicted demand against per-group DR re-solves at the
    announced price; recompute grid deviations from the DR dispatch."""
    scores = {}
    for g in problem.groups:
        scores[g.label] = nmse(solution.p_pred[g.label], np.asarray(dr_results[g.label]))
    dv, _ = deviations_from_dispatch(problem, dr_results)
    t_ps, t_pe = problem.peak_window
    flags = []
    for t in range(t_ps, t_pe + 1):
        worst = float(np.abs(dv[:, t - 1]).max())
        if worst > problem.dv_max + tol:
            flags.append((t, worst))
    return {"e_p": scores, "dv_dr": dv, "peak_violations": flags}

"""Price-based demand response for one HVAC unit over one day.

The cost-minimizing schedule is found subject to comfort, rating, and ramp
limits, with the building's trained network embedded as explicit equality
constraints (white-box form).  A variant with the lumped RC plant
equations in place of the network provides the fully informed comparison
case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envgen import EnvProfile, PriceProfile, RcBuilding
from .narx import NarxParams
from .nlp import NlpOptions, NlpProblem, NlpSolution, chain_clip_ramps, solve
from .whitebox import DayTail, implied_output_bounds, rollout, seed_variables, unroll

PREACT_BOUND = 1e4  # box for lifted hidden preactivations; sigmoid saturates long before


@dataclass(frozen=True)
class DrProblem:
    params_a: NarxParams
    price: PriceProfile
    env: EnvProfile
    tails: DayTail
    t_min: np.ndarray          # comfort floor per hour, degC
    t_max: np.ndarray          # comfort ceiling per hour, degC
    p_max: float               # rated electrical input, kW
    ramp_neg: float            # R_N <= 0, kW/h
    ramp_pos: float            # R_P >= 0, kW/h
    dt: float = 1.0

    def __post_init__(self):
        h = self.env.n_hours
        object.__setattr__(self, "t_min", np.broadcast_to(
            np.asarray(self.t_min, dtype=float), (h,)).copy())
        object.__setattr__(self, "t_max", np.broadcast_to(
            np.asarray(self.t_max, dtype=float), (h,)).copy())
        if np.any(self.t_min > self.t_max):
            raise ValueError("comfort band must satisfy t_min <= t_max per hour")
        if not (self.ramp_neg <= 0.0 <= self.ramp_pos):
            raise ValueError("ramp limits must satisfy R_N <= 0 <= R_P")
        if self.p_max <= 0 or self.dt <= 0:
            raise ValueError("p_max and dt must be positive")
        if self.price.n_hours != h:
            raise ValueError("price and environment profiles must cover the same hours")

    @property
    def horizon(self) -> int:
        return self.env.n_hours


@dataclass
class DrSolution:
    p_opt: np.ndarray
    t_est: np.ndarray
    j_c: float
    diagnostics: NlpSolution


def operating_cost(price_c: np.ndarray, schedule: np.ndarray, dt: float = 1.0) -> float:
    """Daily cost of a schedule: sum of price * power * dt."""
    price_c = np.asarray(price_c, dtype=float)
    schedule = np.asarray(schedule, dtype=float)
    if price_c.shape != schedule.shape:
        raise ValueError("price and schedule must have equal length")
    return float(np.sum(price_c * schedule) * dt)


def _start_schedules(p_max: float, horizon: int) -> list[np.ndarray]:
    """Five spread start trajectories: flat-low, flat-high, pre-cool ramp,
    cap profile, midpoint."""
    precool = np.where(np.arange(1, horizon + 1) <= max(1, horizon // 4), 0.9, 0.15) * p_max
    return [np.full(horizon, 0.05 * p_max),
            np.full(horizon, 0.9 * p_max),
            precool,
            np.full(horizon, p_max),
            np.full(horizon, 0.5 * p_max)]


def _assemble(problem: DrProblem):
    net = unroll(problem.params_a, problem.horizon, problem.tails,
                 problem.env.stacked(), control="decision")
    h = problem.horizon
    n = net.n_vars_total
    p_cols = net.ctrl_cols
    y_cols = net.out_cols

    bounds = np.empty((n, 2))
    bounds[:, 0], bounds[:, 1] = -PREACT_BOUND, PREACT_BOUND
    bounds[p_cols, 0], bounds[p_cols, 1] = 0.0, problem.p_max
    bounds[y_cols, 0] = problem.t_min
    bounds[y_cols, 1] = problem.t_max

    price = problem.price.c
    scale = max(1.0, float(price.sum() * problem.p_max * problem.dt))
    obj_grad = np.zeros(n)
    obj_grad[p_cols] = price * problem.dt / scale

    def objective(x):
        return float(obj_grad @ x), obj_grad

    def eq(x):
        return net.residuals(x), net.jacobian_dense(x)

    def eq_resid(x):
        return net.residuals(x)

    def eq_vjp(x, w):
        return net.jac_t_vec(x, w)

    # ramp rows: (P_t - P_{t-1})/dt in [R_N, R_P]; hour 1 uses the tail value
    has_tail = len(problem.tails.ctrl_tail) > 0
    n_pairs = (h - 1) + (1 if has_tail else 0)
    jac_up = np.zeros((n_pairs, n))
    g_off_up = np.zeros(n_pairs)
    row = 0
    if has_tail:
        jac_up[row, p_cols[0]] = 1.0 / problem.dt
        g_off_up[row] = -problem.tails.ctrl_tail[-1] / problem.dt
        row += 1
    for t in range(1, h):
        jac_up[row, p_cols[t]] = 1.0 / problem.dt
        jac_up[row, p_cols[t - 1]] = -1.0 / problem.dt
        row += 1
    jac = np.vstack([jac_up, -jac_up])
    offset = np.concatenate([g_off_up - problem.ramp_pos, -g_off_up + problem.ramp_neg])

    def ineq(x):
        return jac @ x + offset, jac

    ramp_step_lo = problem.ramp_neg * problem.dt
    ramp_step_hi = problem.ramp_pos * problem.dt
    prev = problem.tails.ctrl_tail[-1] if has_tail else None
    starts = []
    for sched in _start_schedules(problem.p_max, h):
        sched = chain_clip_ramps(sched, 0.0, problem.p_max, ramp_step_lo, ramp_step_hi, prev)
        x0 = np.zeros(n)
        seed_variables(net, x0, sched)
        x0[y_cols] = np.clip(x0[y_cols], problem.t_min, problem.t_max)
        starts.append(x0)

    # natural magnitudes: power ~ rating, preactivations ~ sigmoid active zone,
    # temperatures ~ comfort-band scale
    var_scale = np.full(n, 4.0)
    var_scale[p_cols] = max(problem.p_max, 1.0)
    var_scale[y_cols] = max(float(np.mean(problem.t_max - problem.t_min)), 2.0)

    nlp = NlpProblem(n_vars=n, bounds=bounds, objective=objective, eq=eq,
                     ineq=ineq if n_pairs else None, starts=starts,
                     eq_resid=eq_resid, eq_vjp=eq_vjp,
                     ineq_resid=(lambda x: jac @ x + offset) if n_pairs else None,
                     ineq_vjp=(lambda x, w: jac.T @ w) if n_pairs else None,
                     var_scale=var_scale)
    return nlp, net


def build_dr(problem: DrProblem) -> NlpProblem:
    """Lift the network and wrap comfort/rating/ramp limits into an NLP."""
    return _assemble(problem)[0]


def solve_dr(problem: DrProblem, opts: NlpOptions | None = None) -> DrSolution:
    """Solve the DR problem and return the polished schedule.

    The returned power trajectory is exactly box- and ramp-feasible
    (forward projection), and t_est is the exact sequential network
    response to it, so the white-box equalities hold to machine precision.
    """
    nlp, net = _assemble(problem)
    sol = solve(nlp, opts)
    p = np.clip(sol.x[net.ctrl_cols], 0.0, problem.p_max)
    prev = problem.tails.ctrl_tail[-1] if len(problem.tails.ctrl_tail) else None
    p = chain_clip_ramps(p, 0.0, problem.p_max,
                         problem.ramp_neg * problem.dt, problem.ramp_pos * problem.dt, prev)
    t_est = rollout(problem.params_a, problem.tails, problem.env.stacked(), p)
    j_c = operating_cost(problem.price.c, p, problem.dt)
    if sol.status == "infeasible":
        worst = max(sol.max_eq_violation, sol.max_ineq_violation)
        sol.message += f"; DR infeasible, worst violation {worst:.3e}"
    return DrSolution(p_opt=p, t_est=t_est, j_c=j_c, diagnostics=sol)


# ---------------------------------------------------------------------------
# non-DR baseline and the fully informed comparison case


def non_dr_baseline(env: EnvProfile, plant, setpoint: float,
                    window: tuple[int, int] = (8, 19), kp: float | None = None,
                    init_state: tuple[float, float] | None = None,
                    tails: DayTail | None = None, p_max: float | None = None) -> np.ndarray:
    """Thermostat schedule holding the setpoint inside the occupied window.

    plant is either the RC building (closed loop on the oracle) or trained
    network parameters (closed loop on the model, which then needs tails).
    Proportional control with a steady-state feedforward bias (pure
    proportional cannot hold the setpoint under load at stable gains),
    clamped to [0, p_max], off outside the window.
    """
    from .envgen import rc_step  # local to keep module import cheap

    hours = np.arange(1, env.n_hours + 1)
    in_window = (hours >= window[0]) & (hours <= window[1])

    if isinstance(plant, RcBuilding):
        gain = kp if kp is not None else 0.8 * plant.c_in / plant.cop
        state = init_state if init_state is not None else (setpoint, setpoint)
        samples = env.stacked()
        schedule = np.empty(env.n_hours)
        for t in range(env.n_hours):
            if in_window[t]:
                t_a, t_x, q_i = samples[t]
                p_ff = ((t_x - setpoint) / plant.r_x + (t_a - setpoint) / plant.r_a
                        + q_i) / plant.cop
                p = max(p_ff, 0.0) + gain * (state[0] - setpoint)
            else:
                p = 0.0
            p = float(np.clip(p, 0.0, plant.p_max))
            schedule[t] = p
            state = rc_step(plant, state, p, tuple(samples[t]))
        return schedule

    if isinstance(plant, NarxParams):
        if tails is None or p_max is None:
            raise ValueError("model-based baseline needs tails and p_max")
        from .narx import forward_raw

        gain = kp if kp is not None else 4.0
        arch = plant.arch
        samples = env.stacked()
        # rolling histories seeded from the tails; index -1 is the newest value
        env_hist = [row for row in tails.env_tail]
        ctrl_hist = list(tails.ctrl_tail)
        fb_hist = list(tails.fb_tail)
        schedule = np.empty(env.n_hours)
        for t in range(env.n_hours):
            t_now = fb_hist[-1] if fb_hist else setpoint
            p = gain * (t_now - setpoint) if in_window[t] else 0.0
            p = float(np.clip(p, 0.0, p_max))
            schedule[t] = p
            env_hist.append(samples[t])
            ctrl_hist.append(p)
            row = [float(t + 1)]
            for s in range(3):
                row += [env_hist[-1 - d][s] for d in range(arch.n_env_delays + 1)]
            row += [ctrl_hist[-1 - d] for d in range(arch.n_ctrl_delays + 1)]
            row += [fb_hist[-d] for d in range(1, arch.n_fb_delays + 1)]
            fb_hist.append(forward_raw(plant, np.asarray(row)))
        return schedule

    raise TypeError(f"plant must be RcBuilding or NarxParams, got {type(plant).__name__}")


def solve_dr_rc(problem: DrProblem, building: RcBuilding,
                init_state: tuple[float, float],
                opts: NlpOptions | None = None) -> DrSolution:
    """Fully informed variant: the RC plant equations replace the network.

    Variables are [P (h), T_in (h), T_m (h)] with the explicit-Euler update
    as linear equalities; comfort bounds the T_in block.
    """
    h = problem.horizon
    env = problem.env.stacked()
    n = 3 * h
    p_cols = np.arange(h)
    tin_cols = np.arange(h, 2 * h)
    tm_cols = np.arange(2 * h, 3 * h)
    dt = problem.dt

    bounds = np.empty((n, 2))
    bounds[p_cols, 0], bounds[p_cols, 1] = 0.0, problem.p_max
    bounds[tin_cols, 0] = problem.t_min
    bounds[tin_cols, 1] = problem.t_max
    bounds[tm_cols, 0], bounds[tm_cols, 1] = -100.0, 150.0

    # Euler updates as linear equalities A x = rhs
    a_eq = np.zeros((2 * h, n))
    rhs = np.zeros(2 * h)
    g_in = dt / building.c_in
    g_m = dt / (building.c_m * building.r_m)
    k_loss = 1.0 / building.r_x + 1.0 / building.r_a + 1.0 / building.r_m
    t_in0, t_m0 = init_state
    for t in range(h):
        drive = g_in * (env[t, 1] / building.r_x + env[t, 0] / building.r_a + env[t, 2])
        row = 2 * t
        # T_in[t] = T_in[t-1](1 - g_in*k_loss) + g_in*(T_m[t-1]/r_m - cop*P[t]) + drive
        a_eq[row, tin_cols[t]] = 1.0
        a_eq[row, p_cols[t]] = g_in * building.cop
        if t == 0:
            rhs[row] = t_in0 * (1.0 - g_in * k_loss) + g_in * t_m0 / building.r_m + drive
        else:
            a_eq[row, tin_cols[t - 1]] = -(1.0 - g_in * k_loss)
            a_eq[row, tm_cols[t - 1]] = -g_in / building.r_m
            rhs[row] = drive
        # T_m[t] = T_m[t-1](1 - g_m) + g_m*T_in[t-1]
        row += 1
        a_eq[row, tm_cols[t]] = 1.0
        if t == 0:
            rhs[row] = t_m0 * (1.0 - g_m) + g_m * t_in0
        else:
            a_eq[row, tm_cols[t - 1]] = -(1.0 - g_m)
            a_eq[row, tin_cols[t - 1]] = -g_m
            rhs[row] = 0.0

    def eq(x):
        return a_eq @ x - rhs, a_eq

    obj_grad = np.zeros(n)
    obj_grad[p_cols] = problem.price.c * dt

    def objective(x):
        return float(obj_grad @ x), obj_grad

    has_tail = len(problem.tails.ctrl_tail) > 0
    prev = problem.tails.ctrl_tail[-1] if has_tail else None
    n_pairs = (h - 1) + (1 if has_tail else 0)
    jac_up = np.zeros((n_pairs, n))
    off_up = np.zeros(n_pairs)
    row = 0
    if has_tail:
        jac_up[row, p_cols[0]] = 1.0 / dt
        off_up[row] = -prev / dt
        row += 1
    for t in range(1, h):
        jac_up[row, p_cols[t]] = 1.0 / dt
        jac_up[row, p_cols[t - 1]] = -1.0 / dt
        row += 1
    jac = np.vstack([jac_up, -jac_up])
    offset = np.concatenate([off_up - problem.ramp_pos, -off_up + problem.ramp_neg])

    def ineq(x):
        return jac @ x + offset, jac

    def lift(sched):
        x0 = np.zeros(n)
        x0[p_cols] = sched
        t_in, t_m = t_in0, t_m0
        for t in range(h):
            flux = ((env[t, 1] - t_in) / building.r_x + (env[t, 0] - t_in) / building.r_a
                    + (t_m - t_in) / building.r_m + env[t, 2] - building.cop * sched[t])
            t_in_next = t_in + dt / building.c_in * flux
            t_m = t_m + g_m * (t_in - t_m)
            t_in = t_in_next
            x0[tin_cols[t]] = t_in
            x0[tm_cols[t]] = t_m
        x0[tin_cols] = np.clip(x0[tin_cols], problem.t_min, problem.t_max)
        return x0

    starts = [lift(chain_clip_ramps(s, 0.0, problem.p_max, problem.ramp_neg * dt,
                                    problem.ramp_pos * dt, prev))
              for s in _start_schedules(problem.p_max, h)]

    nlp = NlpProblem(n_vars=n, bounds=bounds, objective=objective, eq=eq, ineq=ineq,
                     starts=starts)
    sol = solve(nlp, opts)
    p = np.clip(sol.x[p_cols], 0.0, problem.p_max)
    p = chain_clip_ramps(p, 0.0, problem.p_max, problem.ramp_neg * dt,
                         problem.ramp_pos * dt, prev)
    from .envgen import simulate_day
    t_est = simulate_day(building, init_state, p, problem.env, dt)
    return DrSolution(p_opt=p, t_est=t_est, j_c=operating_cost(problem.price.c, p, dt),
                      diagnostics=sol)

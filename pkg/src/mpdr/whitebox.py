"""Express a trained NARX as explicit algebraic constraints over a day.

Hidden preactivations and hourly outputs are lifted into optimization
variables tied together by equality residuals: one linear residual per
hidden neuron per hour, one sigmoid-bearing residual per output per hour.
Feedback inputs wire to earlier hours' output variables; hours whose
delayed inputs reach before the day boundary read fixed previous-day tail
values.  Affine input/output normalization is folded into the residual
coefficients, so the residual system has exactly horizon*(n_hidden+1)
rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import expit

from .narx import ENV_SIGNALS, NarxParams


@dataclass(frozen=True)
class DayTail:
    """Previous-day values feeding the first hours of the horizon.

    Rows/entries are chronological: index -1 is the final hour of day d-1.
    env_tail has one [t_a, t_x, q_i] row per environment delay; ctrl_tail
    and fb_tail are sized by the control and feedback delay counts.
    """

    env_tail: np.ndarray
    ctrl_tail: np.ndarray
    fb_tail: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "env_tail",
                           np.asarray(self.env_tail, dtype=float).reshape(-1, 3)
                           if np.size(self.env_tail) else np.zeros((0, 3)))
        object.__setattr__(self, "ctrl_tail", np.asarray(self.ctrl_tail, dtype=float).ravel())
        object.__setattr__(self, "fb_tail", np.asarray(self.fb_tail, dtype=float).ravel())

    @classmethod
    def for_arch(cls, arch, env_tail, ctrl_tail, fb_tail) -> "DayTail":
        tail = cls(env_tail, ctrl_tail, fb_tail)
        if tail.env_tail.shape[0] != arch.n_env_delays:
            raise ValueError(f"env_tail needs {arch.n_env_delays} rows, got {tail.env_tail.shape[0]}")
        if len(tail.ctrl_tail) != arch.n_ctrl_delays:
            raise ValueError(f"ctrl_tail needs {arch.n_ctrl_delays} values, got {len(tail.ctrl_tail)}")
        if len(tail.fb_tail) != arch.n_fb_delays:
            raise ValueError(f"fb_tail needs {arch.n_fb_delays} values, got {len(tail.fb_tail)}")
        return tail

    @classmethod
    def steady(cls, arch, env_sample, ctrl_value, fb_value) -> "DayTail":
        """Tails for a plant that sat at constant conditions before the day."""
        return cls(np.tile(np.asarray(env_sample, dtype=float), (arch.n_env_delays, 1)),
                   np.full(arch.n_ctrl_delays, float(ctrl_value)),
                   np.full(arch.n_fb_delays, float(fb_value)))


def _check_tails(params: NarxParams, tails: DayTail) -> None:
    arch = params.arch
    if tails.env_tail.shape[0] < arch.n_env_delays:
        raise ValueError(f"env_tail too short: need {arch.n_env_delays} rows")
    if len(tails.ctrl_tail) < arch.n_ctrl_delays:
        raise ValueError(f"ctrl_tail too short: need {arch.n_ctrl_delays} values")
    if len(tails.fb_tail) < arch.n_fb_delays:
        raise ValueError(f"fb_tail too short: need {arch.n_fb_delays} values")


@dataclass
class UnrolledNet:
    """Residual system r(vars) = 0 replicating one network over a horizon."""

    params: NarxParams
    horizon: int
    tails: DayTail
    variable_index: dict
    own_base: int
    n_own_vars: int
    n_vars_total: int
    control: str
    # assembled coefficients: r = A @ v + b - (sigmoid coupling on output rows)
    a_matrix: np.ndarray
    b_const: np.ndarray
    out_rows: np.ndarray      # (horizon,) residual row of each hour's output equation
    nk_cols: np.ndarray       # (horizon, n_hidden) variable columns of preactivations
    out_cols: np.ndarray      # (horizon,) variable columns of outputs
    ctrl_cols: np.ndarray | None  # (horizon,) control columns; None when control is fixed
    fixed_env: np.ndarray
    hour_values: np.ndarray
    fixed_ctrl: np.ndarray | None

    @property
    def n_residuals(self) -> int:
        return self.a_matrix.shape[0]

    def residuals(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if len(v) != self.n_vars_total:
            raise ValueError(f"expected {self.n_vars_total} variables, got {len(v)}")
        r = self.a_matrix @ v + self.b_const
        m = expit(v[self.nk_cols])
        r[self.out_rows] -= m @ self.params.l_out
        return r

    def jacobian_dense(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if len(v) != self.n_vars_total:
            raise ValueError(f"expected {self.n_vars_total} variables, got {len(v)}")
        jac = self.a_matrix.copy()
        m = expit(v[self.nk_cols])
        dm = self.params.l_out * m * (1.0 - m)
        np.subtract.at(jac, (self.out_rows[:, None], self.nk_cols), dm)
        return jac

    def jac_t_vec(self, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        """J(v)^T w without materializing the Jacobian (solver hot path)."""
        out = self.a_matrix.T @ w
        m = expit(v[self.nk_cols])
        dm = self.params.l_out * m * (1.0 - m)
        out[self.nk_cols] -= dm * w[self.out_rows][:, None]
        return out

    def dump_variable_index(self) -> str:
        lines = [f"{slot:6d}  hour={key[1]:3d}  {key[0]}" + (f"[{key[2]}]" if len(key) > 2 else "")
                 for key, slot in sorted(self.variable_index.items(), key=lambda kv: kv[1])]
        return "\n".join(lines)


def _norm_coef(lo: float, hi: float) -> tuple[float, float]:
    """normalize(w) = s*w + o for bounds (lo, hi)."""
    s = 2.0 / (hi - lo)
    return s, -1.0 - s * lo


def unroll(params: NarxParams, horizon: int, tails: DayTail, fixed_env: np.ndarray,
           hour_values: np.ndarray | None = None, control: str = "decision",
           shared_ctrl_cols: np.ndarray | None = None,
           fixed_ctrl: np.ndarray | None = None,
           base: int = 0, n_vars_total: int | None = None) -> UnrolledNet:
    """Build the residual system for one network over `horizon` hours.

    control:
      "decision" - control trajectory gets its own variable slots (DR case);
      "shared"   - control slots are the caller-provided shared_ctrl_cols
                   (retail price shared across units);
      "fixed"    - control values are exogenous constants (fixed_ctrl).
    """
    arch = params.arch
    _check_tails(params, tails)
    fixed_env = np.asarray(fixed_env, dtype=float)
    if fixed_env.shape != (horizon, 3):
        raise ValueError(f"fixed_env must be ({horizon}, 3), got {fixed_env.shape}")
    if hour_values is None:
        hour_values = np.arange(1, horizon + 1, dtype=float)
    hour_values = np.asarray(hour_values, dtype=float)
    if len(hour_values) != horizon:
        raise ValueError("hour_values must cover every hour of the horizon")

    nh = arch.n_hidden
    own_ctrl = control == "decision"
    if control == "shared":
        if shared_ctrl_cols is None or len(shared_ctrl_cols) != horizon:
            raise ValueError("shared control needs one column per hour")
        shared_ctrl_cols = np.asarray(shared_ctrl_cols, dtype=int)
    if control == "fixed":
        if fixed_ctrl is None or len(fixed_ctrl) != horizon:
            raise ValueError("fixed control needs one value per hour")
        fixed_ctrl = np.asarray(fixed_ctrl, dtype=float)

    n_own = horizon * (nh + 1) + (horizon if own_ctrl else 0)
    if n_vars_total is None:
        n_vars_total = base + n_own

    variable_index: dict = {}
    ctrl_cols = None
    offset = base
    if own_ctrl:
        ctrl_cols = np.arange(offset, offset + horizon)
        for t in range(horizon):
            variable_index[("ctrl", t + 1)] = int(ctrl_cols[t])
        offset += horizon
    elif control == "shared":
        ctrl_cols = shared_ctrl_cols
        for t in range(horizon):
            variable_index[("ctrl", t + 1)] = int(ctrl_cols[t])
    nk_cols = np.arange(offset, offset + horizon * nh).reshape(horizon, nh)
    for t in range(horizon):
        for k in range(nh):
            variable_index[("hidden", t + 1, k)] = int(nk_cols[t, k])
    offset += horizon * nh
    out_cols = np.arange(offset, offset + horizon)
    for t in range(horizon):
        variable_index[("out", t + 1)] = int(out_cols[t])

    n_res = horizon * (nh + 1)
    A = np.zeros((n_res, n_vars_total))
    b = np.zeros(n_res)
    out_rows = np.empty(horizon, dtype=int)

    layout = params.input_layout
    x_min, x_max = params.x_min, params.x_max
    s_y, o_y = _norm_coef(params.y_min, params.y_max)

    # classify each input once: (kind, payload) where kind is "fixed" or "var"
    def input_source(label: str, t: int):
        """t is 1-based hour; returns ("fixed", value) or ("var", column)."""
        if label == "t":
            return "fixed", hour_values[t - 1]
        name, _, d_str = label.partition(":")
        d = int(d_str)
        rel = t - d
        if name in ENV_SIGNALS:
            s = ENV_SIGNALS.index(name)
            if rel >= 1:
                return "fixed", fixed_env[rel - 1, s]
            return "fixed", tails.env_tail[rel - 1, s]
        if name == "ctrl":
            if rel >= 1:
                if control == "fixed":
                    return "fixed", fixed_ctrl[rel - 1]
                return "var", int(ctrl_cols[rel - 1])
            return "fixed", tails.ctrl_tail[rel - 1]
        if name == "fb":
            if rel >= 1:
                return "var", int(out_cols[rel - 1])
            return "fixed", tails.fb_tail[rel - 1]
        raise ValueError(f"unknown input label {label!r}")

    for t in range(1, horizon + 1):
        row0 = (t - 1) * (nh + 1)
        # preactivation rows: n_k - sum_i H_ki * (s_i*w_i + o_i) - d_k = 0
        const = -params.d.copy()
        for i, label in enumerate(layout):
            s_i, o_i = _norm_coef(x_min[i], x_max[i])
            kind, payload = input_source(label, t)
            if kind == "fixed":
                const -= params.h[:, i] * (s_i * payload + o_i)
            else:
                A[row0:row0 + nh, payload] -= params.h[:, i] * s_i
                const -= params.h[:, i] * o_i
        for k in range(nh):
            A[row0 + k, nk_cols[t - 1, k]] += 1.0
            b[row0 + k] = const[k]
        # output row: s_y*y + o_y - e_out - sum_k L_k * sigmoid(n_k) = 0
        r_out = row0 + nh
        A[r_out, out_cols[t - 1]] = s_y
        b[r_out] = o_y - params.e_out
        out_rows[t - 1] = r_out

    return UnrolledNet(params=params, horizon=horizon, tails=tails,
                       variable_index=variable_index, own_base=base, n_own_vars=n_own,
                       n_vars_total=n_vars_total, control=control, a_matrix=A, b_const=b,
                       out_rows=out_rows, nk_cols=nk_cols, out_cols=out_cols,
                       ctrl_cols=None if control == "fixed" else np.asarray(ctrl_cols),
                       fixed_env=fixed_env, hour_values=hour_values, fixed_ctrl=fixed_ctrl)


def eval_residuals(net: UnrolledNet, variables: np.ndarray) -> np.ndarray:
    return net.residuals(variables)


def eval_jacobian(net: UnrolledNet, variables: np.ndarray) -> sparse.csr_matrix:
    return sparse.csr_matrix(net.jacobian_dense(variables))


# ---------------------------------------------------------------------------
# sequential reference evaluation


def rollout(params: NarxParams, tails: DayTail, fixed_env: np.ndarray,
            ctrl_values: np.ndarray, hour_values: np.ndarray | None = None,
            return_preacts: bool = False):
    """Chain single-hour forward passes over the horizon; the white-box
    residual system must agree with this to numerical precision."""
    arch = params.arch
    _check_tails(params, tails)
    fixed_env = np.asarray(fixed_env, dtype=float)
    ctrl_values = np.asarray(ctrl_values, dtype=float)
    horizon = len(ctrl_values)
    if fixed_env.shape != (horizon, 3):
        raise ValueError(f"fixed_env must be ({horizon}, 3), got {fixed_env.shape}")
    if hour_values is None:
        hour_values = np.arange(1, horizon + 1, dtype=float)

    outputs = np.empty(horizon)
    preacts = np.empty((horizon, arch.n_hidden))
    layout = params.input_layout
    for t in range(1, horizon + 1):
        row = np.empty(len(layout))
        for i, label in enumerate(layout):
            if label == "t":
                row[i] = hour_values[t - 1]
                continue
            name, _, d_str = label.partition(":")
            rel = t - int(d_str)
            if name in ENV_SIGNALS:
                s = ENV_SIGNALS.index(name)
                row[i] = fixed_env[rel - 1, s] if rel >= 1 else tails.env_tail[rel - 1, s]
            elif name == "ctrl":
                row[i] = ctrl_values[rel - 1] if rel >= 1 else tails.ctrl_tail[rel - 1]
            else:
                row[i] = outputs[rel - 1] if rel >= 1 else tails.fb_tail[rel - 1]
        xn = 2.0 * (row - params.x_min) / (params.x_max - params.x_min) - 1.0
        n = params.h @ xn + params.d
        preacts[t - 1] = n
        g = params.l_out @ expit(n) + params.e_out
        outputs[t - 1] = (params.y_max - params.y_min) / 2.0 * (g + 1.0) + params.y_min
    if return_preacts:
        return outputs, preacts
    return outputs


def seed_variables(net: UnrolledNet, v: np.ndarray, ctrl_values: np.ndarray) -> np.ndarray:
    """Fill a variable vector with the rollout-consistent trajectory for the
    given control values (writes the net's own slots plus decision controls)."""
    outputs, preacts = rollout(net.params, net.tails, net.fixed_env,
                               np.asarray(ctrl_values, dtype=float),
                               net.hour_values, return_preacts=True)
    if net.control == "decision":
        v[net.ctrl_cols] = ctrl_values
    v[net.nk_cols.ravel()] = preacts.ravel()
    v[net.out_cols] = outputs
    return v


def implied_output_bounds(params: NarxParams, margin: float = 0.05) -> tuple[float, float]:
    """Reachable raw-output interval of the network (sigmoids lie in (0,1))."""
    pos = float(np.sum(np.maximum(params.l_out, 0.0)))
    neg = float(np.sum(np.minimum(params.l_out, 0.0)))
    g_lo, g_hi = params.e_out + neg, params.e_out + pos
    half = (params.y_max - params.y_min) / 2.0
    lo = half * (g_lo + 1.0) + params.y_min
    hi = half * (g_hi + 1.0) + params.y_min
    pad = margin * max(hi - lo, 1.0)
    return lo - pad, hi + pad

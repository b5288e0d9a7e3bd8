"""Radial feeder model: power flow, voltage sensitivities, and the
HVAC-load conversion matrix.

The feeder is a balanced per-phase equivalent of a 4.16 kV class network:
loads aggregate per bus, the backward/forward sweep solves the flow, and
sensitivity matrices come from numerical perturbation of the converged
operating point.  HVAC blocks are assumed three-phase balanced at unity
power factor, so the conversion matrix splits each bus total equally over
the three phases with zero reactive entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class FeederFormatError(ValueError):
    pass


class PowerFlowError(RuntimeError):
    pass


@dataclass
class Feeder:
    bus_ids: list[int]
    lines: list[tuple[int, int, float, float]]   # (from, to, r_pu, x_pu)
    slack_id: int
    slack_v: float
    s_base_mva: float
    v_base_kv: float
    base_p: np.ndarray       # (n_bus, n_hours) kW
    base_q: np.ndarray       # (n_bus, n_hours) kvar
    hvac_buses: list[int]
    hvac_n_units: dict[int, int]
    hvac_unit_kw: dict[int, float]
    conventional: np.ndarray  # (n_hvac, n_hours) kW
    # derived topology (filled in __post_init__)
    index: dict[int, int] = field(default_factory=dict)
    parent: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    order: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    z_line: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))

    def __post_init__(self):
        ids = self.bus_ids
        if len(set(ids)) != len(ids):
            dupes = sorted({b for b in ids if ids.count(b) > 1})
            raise FeederFormatError(f"duplicate bus ids: {dupes}")
        if self.slack_id not in ids:
            raise FeederFormatError(f"slack bus {self.slack_id} is not declared")
        self.index = {b: i for i, b in enumerate(ids)}
        n = len(ids)
        for f, t, _, _ in self.lines:
            if f not in self.index or t not in self.index:
                raise FeederFormatError(f"line {f}-{t} references undeclared bus")
        if len(self.lines) != n - 1:
            raise FeederFormatError(
                f"radial feeder needs {n - 1} lines for {n} buses, got {len(self.lines)}")
        # BFS from the slack; a revisit names a cycle, unreached buses are disconnected
        adj: dict[int, list[tuple[int, int]]] = {b: [] for b in ids}
        for li, (f, t, r, x) in enumerate(self.lines):
            adj[f].append((t, li))
            adj[t].append((f, li))
        parent = np.full(n, -1, dtype=int)
        z = np.zeros(n, dtype=complex)
        seen = {self.slack_id}
        order = [self.index[self.slack_id]]
        queue = [self.slack_id]
        used_lines = set()
        while queue:
            b = queue.pop(0)
            for nb, li in adj[b]:
                if li in used_lines:
                    continue
                if nb in seen:
                    raise FeederFormatError(f"cycle detected through buses {b} and {nb}")
                used_lines.add(li)
                seen.add(nb)
                f, t, r, x = self.lines[li]
                parent[self.index[nb]] = self.index[b]
                z[self.index[nb]] = complex(r, x)
                order.append(self.index[nb])
                queue.append(nb)
        if len(seen) != n:
            missing = sorted(set(ids) - seen)
            raise FeederFormatError(f"disconnected buses: {missing}")
        self.parent = parent
        self.order = np.asarray(order, dtype=int)
        self.z_line = z
        for b in self.hvac_buses:
            if b not in self.index:
                raise FeederFormatError(f"HVAC bus {b} is not declared")

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_hours(self) -> int:
        return self.base_p.shape[1]

    def hvac_index(self) -> np.ndarray:
        return np.asarray([self.index[b] for b in self.hvac_buses], dtype=int)


@dataclass(frozen=True)
class Sensitivities:
    s_vp: np.ndarray          # (n_bus, n_bus), pu volts per pu active injection
    s_vq: np.ndarray          # (n_bus, n_bus), pu volts per pu reactive injection
    operating_point: str

    def __post_init__(self):
        if self.s_vp.shape != self.s_vq.shape or self.s_vp.ndim != 2:
            raise ValueError("sensitivity matrices must be square and congruent")


def load_feeder(path: str | Path, n_hours: int = 24) -> Feeder:
    """Parse the line-oriented feeder file and validate the topology."""
    bus_ids: list[int] = []
    lines: list[tuple[int, int, float, float]] = []
    slack_id, slack_v = None, 1.0
    s_base, v_base = 1.0, 4.16
    load_rows: list[tuple[int, int, float, float]] = []
    conv_rows: list[tuple[int, int, float]] = []
    hvac: list[tuple[int, int, float]] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        kind = parts[0].upper()
        try:
            if kind == "BUS":
                bus_ids.append(int(parts[1]))
            elif kind == "LINE":
                lines.append((int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4])))
            elif kind == "SLACK":
                slack_id, slack_v = int(parts[1]), float(parts[2])
            elif kind == "SBASE":
                s_base = float(parts[1])
                if len(parts) > 2:
                    v_base = float(parts[2])
            elif kind == "HVACBUS":
                hvac.append((int(parts[1]), int(parts[2]), float(parts[3])))
            elif kind == "LOAD":
                load_rows.append((int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4])))
            elif kind == "CONVLOAD":
                conv_rows.append((int(parts[1]), int(parts[2]), float(parts[3])))
            else:
                raise FeederFormatError(f"{path}:{lineno}: unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, FeederFormatError):
                raise
            raise FeederFormatError(f"{path}:{lineno}: malformed record {raw!r}") from exc
    if slack_id is None:
        raise FeederFormatError(f"{path}: no SLACK record")
    n = len(bus_ids)
    idx = {b: i for i, b in enumerate(bus_ids)}
    base_p = np.zeros((n, n_hours))
    base_q = np.zeros((n, n_hours))
    for b, h, kw, kvar in load_rows:
        if b not in idx:
            raise FeederFormatError(f"{path}: LOAD references undeclared bus {b}")
        if not (1 <= h <= n_hours):
            raise FeederFormatError(f"{path}: LOAD hour {h} outside 1..{n_hours}")
        base_p[idx[b], h - 1] += kw
        base_q[idx[b], h - 1] += kvar
    hvac_buses = [b for b, _, _ in hvac]
    conventional = np.zeros((len(hvac_buses), n_hours))
    hv_pos = {b: i for i, (b, _, _) in enumerate(hvac)}
    for b, h, kw in conv_rows:
        if b not in hv_pos:
            raise FeederFormatError(f"{path}: CONVLOAD bus {b} is not an HVACBUS")
        conventional[hv_pos[b], h - 1] += kw
    return Feeder(bus_ids=bus_ids, lines=lines, slack_id=slack_id, slack_v=slack_v,
                  s_base_mva=s_base, v_base_kv=v_base, base_p=base_p, base_q=base_q,
                  hvac_buses=hvac_buses,
                  hvac_n_units={b: nu for b, nu, _ in hvac},
                  hvac_unit_kw={b: kw for b, _, kw in hvac},
                  conventional=conventional)


def _sweep(feeder: Feeder, s_pu: np.ndarray, tol: float = 1e-8,
           max_iter: int = 100) -> np.ndarray:
    """Backward/forward sweep; s_pu is (n_bus, m) complex consumption.

    Columns are independent cases solved simultaneously.  Returns complex
    bus voltages (n_bus, m).
    """
    n, m = s_pu.shape
    order = feeder.order
    parent = feeder.parent
    z = feeder.z_line
    v = np.full((n, m), feeder.slack_v, dtype=complex)
    slack = feeder.index[feeder.slack_id]
    for it in range(max_iter):
        i_bus = np.conj(s_pu / v)
        i_branch = i_bus.copy()
        for b in order[::-1]:
            p = parent[b]
            if p >= 0:
                i_branch[p] += i_branch[b]
        v_new = v.copy()
        v_new[slack] = feeder.slack_v
        for b in order:
            p = parent[b]
            if p >= 0:
                v_new[b] = v_new[p] - z[b] * i_branch[b]
        delta = np.max(np.abs(v_new - v))
        v = v_new
        if delta <= tol:
            return v
    mismatch = float(np.max(np.abs(np.conj(s_pu / v) - i_bus)))
    raise PowerFlowError(f"sweep did not converge in {max_iter} iterations "
                         f"(last voltage change {delta:.3e}, current mismatch {mismatch:.3e})")


def power_flow(feeder: Feeder, p_kw: np.ndarray, q_kvar: np.ndarray | None = None) -> np.ndarray:
    """Voltage magnitudes (pu) for per-bus consumption in kW/kvar."""
    p_kw = np.asarray(p_kw, dtype=float)
    if len(p_kw) != feeder.n_bus:
        raise ValueError(f"injections must cover all {feeder.n_bus} buses")
    q_kvar = np.zeros_like(p_kw) if q_kvar is None else np.asarray(q_kvar, dtype=float)
    s = (p_kw + 1j * q_kvar) / (1000.0 * feeder.s_base_mva)
    v = _sweep(feeder, s[:, None])
    return np.abs(v[:, 0])


def sensitivity(feeder: Feeder, p_kw: np.ndarray, q_kvar: np.ndarray,
                delta_pu: float = 1e-4, tag: str = "") -> Sensitivities:
    """Numerical voltage-sensitivity matrices at an operating point.

    Column n holds d|V|/dP_n (and d|V|/dQ_n) obtained by perturbing one
    bus injection by delta_pu and differencing converged solutions.
    """
    n = feeder.n_bus
    s0 = (np.asarray(p_kw, dtype=float) + 1j * np.asarray(q_kvar, dtype=float)) \
        / (1000.0 * feeder.s_base_mva)
    cases = np.repeat(s0[:, None], 2 * n + 1, axis=1)
    cases[np.arange(n), 1 + np.arange(n)] += delta_pu
    cases[np.arange(n), 1 + n + np.arange(n)] += 1j * delta_pu
    v = np.abs(_sweep(feeder, cases))
    v0 = v[:, 0]
    s_vp = (v[:, 1:n + 1] - v0[:, None]) / delta_pu
    s_vq = (v[:, n + 1:] - v0[:, None]) / delta_pu
    return Sensitivities(s_vp=s_vp, s_vq=s_vq, operating_point=tag)


def hourly_sensitivities(feeder: Feeder) -> list[Sensitivities]:
    """Sensitivities at every hour's base-load operating point."""
    return [sensitivity(feeder, feeder.base_p[:, h], feeder.base_q[:, h], tag=f"hour {h + 1}")
            for h in range(feeder.n_hours)]


def conversion_matrix(feeder: Feeder) -> np.ndarray:
    """(6*n_bus, n_hvac) map from HVAC bus totals to stacked per-phase
    [P_a P_b P_c Q_a Q_b Q_c] blocks: equal three-phase split, zero vars."""
    if not feeder.hvac_buses:
        raise ValueError("feeder declares no HVAC buses")
    b = np.zeros((6 * feeder.n_bus, len(feeder.hvac_buses)))
    for col, bus in enumerate(feeder.hvac_buses):
        n = feeder.index[bus]
        b[6 * n:6 * n + 3, col] = 1.0 / 3.0
    return b


def stacked_phase_sensitivity(sens: Sensitivities) -> np.ndarray:
    """(n_bus, 6*n_bus) sensitivity against the stacked per-phase vector."""
    n = sens.s_vp.shape[0]
    out = np.zeros((n, 6 * n))
    for b in range(n):
        out[:, 6 * b:6 * b + 3] = sens.s_vp[:, b][:, None]
        out[:, 6 * b + 3:6 * b + 6] = sens.s_vq[:, b][:, None]
    return out


def voltage_deviation(sens: Sensitivities, b_matrix: np.ndarray,
                      hvac_totals_kw: np.ndarray, s_base_mva: float = 1.0) -> np.ndarray:
    """Per-bus voltage deviation (pu) from HVAC bus totals in kW."""
    totals_pu = np.asarray(hvac_totals_kw, dtype=float) / (1000.0 * s_base_mva)
    if b_matrix.shape[1] != len(totals_pu):
        raise ValueError("conversion matrix and totals dimensions differ")
    stacked = b_matrix @ totals_pu
    return stacked_phase_sensitivity(sens) @ stacked

"""Synthetic environment, price, and building-plant data.

The plant standing in for a real commercial building is a lumped 3R2C
network (indoor air node + thermal mass node) driven by ambient and
adjacent temperatures and an internal heat load, cooled by an HVAC unit
with a constant COP.  Everything here is a pure function of its inputs
and a seed, so whole simulation campaigns replay bit-for-bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_HOURS = 24
DT_HOURS = 1.0


@dataclass(frozen=True)
class EnvProfile:
    """One day of hourly environment data: adjacent/ambient temperature and internal load."""

    day_index: int
    t_a: np.ndarray  # adjacent-space temperature, degC
    t_x: np.ndarray  # ambient temperature, degC
    q_i: np.ndarray  # internal thermal load, kW

    def __post_init__(self):
        for name in ("t_a", "t_x", "q_i"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.t_x)
        if len(self.t_a) != n or len(self.q_i) != n or n == 0:
            raise ValueError("environment signals must share one nonzero length")
        if np.any(self.q_i < 0):
            raise ValueError("internal load q_i must be nonnegative")

    @property
    def n_hours(self) -> int:
        return len(self.t_x)

    def stacked(self) -> np.ndarray:
        """(n_hours, 3) array in [t_a, t_x, q_i] column order."""
        return np.column_stack([self.t_a, self.t_x, self.q_i])


@dataclass(frozen=True)
class RcBuilding:
    """3R2C single-zone plant with a variable-speed cooling unit."""

    c_in: float  # indoor-air capacitance, kWh/degC
    c_m: float   # mass capacitance, kWh/degC
    r_x: float   # resistance to ambient, degC/kW
    r_a: float   # resistance to adjacent space, degC/kW
    r_m: float   # resistance air<->mass, degC/kW
    cop: float   # coefficient of performance
    p_max: float  # rated electrical input, kW

    def __post_init__(self):
        for name in ("c_in", "c_m", "r_x", "r_a", "r_m", "cop", "p_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"building parameter {name} must be strictly positive")


@dataclass(frozen=True)
class PriceProfile:
    """One day of hourly retail prices with wholesale floor and cap, $/kWh."""

    c: np.ndarray
    l: np.ndarray
    c_min: np.ndarray
    c_max: np.ndarray

    def __post_init__(self):
        for name in ("c", "l", "c_min", "c_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.c)
        if any(len(getattr(self, name)) != n for name in ("l", "c_min", "c_max")) or n == 0:
            raise ValueError("price signals must share one nonzero length")
        if np.any(self.l > self.c_min + 1e-12) or np.any(self.c_min > self.c_max + 1e-12):
            raise ValueError("prices must satisfy l <= c_min <= c_max per hour")

    @property
    def n_hours(self) -> int:
        return len(self.c)


@dataclass(frozen=True)
class SeasonParams:
    """Shape parameters for the synthetic summer weather generator."""

    t_x_mean: float = 28.5
    t_x_amplitude: float = 5.5
    t_x_noise: float = 0.8       # uniform half-width, degC
    t_x_peak_hour: int = 15
    t_a_base: float = 22.0
    t_a_noise: float = 0.2
    q_base: float = 1.0          # kW outside working hours
    q_peak: float = 12.0         # kW during working hours
    q_noise: float = 0.5
    day_drift: float = 1.5       # slow multi-day swing of the daily mean, degC

    def __post_init__(self):
        if self.t_x_amplitude < 0:
            raise ValueError("t_x_amplitude must be nonnegative")
        for name in ("t_x_noise", "t_a_noise", "q_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.q_base < 0 or self.q_peak < self.q_base:
            raise ValueError("need 0 <= q_base <= q_peak")


def _day_rng(seed: int, day_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([stream, int(seed), int(day_index)])


def generate_environment(day_index: int, season_params: SeasonParams | None = None,
                         seed: int = 0) -> EnvProfile:
    """Synthesize one day of (t_a, t_x, q_i); deterministic in (day_index, seed).

    Ambient temperature follows a diurnal sinusoid peaking mid-afternoon
    plus a slow multi-day drift and bounded uniform noise.  The internal
    load steps up at hour 7 and back down after hour 19 (office occupancy).
    """
    sp = season_params if season_params is not None else SeasonParams()
    rng = _day_rng(seed, day_index, stream=1)
    hours = np.arange(1, N_HOURS + 1, dtype=float)

    drift = sp.day_drift * np.sin(2.0 * np.pi * day_index / 11.0)
    diurnal = sp.t_x_amplitude * np.cos(2.0 * np.pi * (hours - sp.t_x_peak_hour) / 24.0)
    t_x = sp.t_x_mean + drift + diurnal + rng.uniform(-sp.t_x_noise, sp.t_x_noise, N_HOURS)

    t_a = sp.t_a_base + rng.uniform(-sp.t_a_noise, sp.t_a_noise, N_HOURS)

    occupied = (hours >= 7) & (hours <= 19)
    q_i = np.where(occupied, sp.q_peak, sp.q_base) + rng.uniform(-sp.q_noise, sp.q_noise, N_HOURS)
    q_i = np.maximum(q_i, 0.0)

    return EnvProfile(day_index=day_index, t_a=t_a, t_x=t_x, q_i=q_i)


def rc_step(building: RcBuilding, state: tuple[float, float], p: float,
            env_sample: tuple[float, float, float], dt: float = DT_HOURS) -> tuple[float, float]:
    """One explicit-Euler step of the 3R2C plant.

    state is (t_in, t_m); env_sample is (t_a, t_x, q_i).  Returns the new
    (t_in, t_m).  The electrical input p removes cop*p kW of heat.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not (-1e-9 <= p <= building.p_max + 1e-9):
        raise ValueError(f"p={p} outside [0, {building.p_max}]")
    t_in, t_m = state
    t_a, t_x, q_i = env_sample
    flux = ((t_x - t_in) / building.r_x + (t_a - t_in) / building.r_a
            + (t_m - t_in) / building.r_m + q_i - building.cop * p)
    t_in_next = t_in + dt / building.c_in * flux
    t_m_next = t_m + dt / building.c_m * (t_in - t_m) / building.r_m
    return t_in_next, t_m_next


def simulate_day(building: RcBuilding, init_state: tuple[float, float],
                 schedule: np.ndarray, env: EnvProfile, dt: float = DT_HOURS) -> np.ndarray:
    """Chain rc_step over a day; returns the hourly t_in trace (after each step)."""
    schedule = np.asarray(schedule, dtype=float)
    if len(schedule) != env.n_hours:
        raise ValueError(f"schedule has {len(schedule)} entries for {env.n_hours} hours")
    state = (float(init_state[0]), float(init_state[1]))
    trace = np.empty(env.n_hours)
    samples = env.stacked()
    for h in range(env.n_hours):
        state = rc_step(building, state, float(schedule[h]), tuple(samples[h]), dt)
        trace[h] = state[0]
    return trace


def simulate_day_states(building: RcBuilding, init_state: tuple[float, float],
                        schedule: np.ndarray, env: EnvProfile,
                        dt: float = DT_HOURS) -> tuple[np.ndarray, tuple[float, float]]:
    """Like simulate_day but also returns the final (t_in, t_m) for chaining days."""
    schedule = np.asarray(schedule, dtype=float)
    if len(schedule) != env.n_hours:
        raise ValueError(f"schedule has {len(schedule)} entries for {env.n_hours} hours")
    state = (float(init_state[0]), float(init_state[1]))
    trace = np.empty(env.n_hours)
    samples = env.stacked()
    for h in range(env.n_hours):
        state = rc_step(building, state, float(schedule[h]), tuple(samples[h]), dt)
        trace[h] = state[0]
    return trace, state


def generate_price_day(day_index: int, seed: int, tou_cap: np.ndarray,
                       wholesale: np.ndarray) -> PriceProfile:
    """Draw a retail price profile between the wholesale floor and the TOU cap.

    Day-ahead-like shape: the draw rides the diurnal wholesale/cap pattern
    (cheap nights, expensive afternoons) with a day-varying level and
    amplitude plus small per-hour noise; deterministic per
    (day_index, seed).
    """
    tou_cap = np.asarray(tou_cap, dtype=float)
    wholesale = np.asarray(wholesale, dtype=float)
    if tou_cap.shape != wholesale.shape:
        raise ValueError("tou_cap and wholesale must have equal length")
    if np.any(wholesale > tou_cap + 1e-12):
        raise ValueError("cap below wholesale")
    n = len(tou_cap)
    rng = _day_rng(seed, day_index, stream=2)
    hours = np.arange(1, n + 1, dtype=float)
    shape = np.clip(np.sin(np.pi * (hours - 7) / 13), 0.0, 1.0)  # rises 7h, peaks ~13-14h
    level = rng.uniform(0.06, 0.22)
    amplitude = rng.uniform(0.55, 0.95)
    u = np.clip(level + amplitude * shape + rng.uniform(-0.06, 0.06, n), 0.0, 1.0)
    c = wholesale + u * (tou_cap - wholesale)
    return PriceProfile(c=c, l=wholesale, c_min=wholesale.copy(), c_max=tou_cap.copy())


def default_wholesale() -> np.ndarray:
    """Cheap-night / expensive-day wholesale profile, $/kWh."""
    hours = np.arange(1, N_HOURS + 1, dtype=float)
    return 0.035 + 0.04 * np.clip(np.sin(np.pi * (hours - 6) / 14), 0.0, None)


def default_tou_cap() -> np.ndarray:
    """Three-step TOU cap (off-peak / mid-peak / on-peak), $/kWh."""
    cap = np.full(N_HOURS, 0.12)
    cap[7:11] = 0.18   # hours 8..11 mid-peak
    cap[11:19] = 0.26  # hours 12..19 on-peak
    cap[19:22] = 0.18  # hours 20..22 mid-peak
    return cap


# ---------------------------------------------------------------------------
# file formats


def write_env_csv(path: str | Path, profiles: list[EnvProfile]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "hour", "t_a", "t_x", "q_i"])
        for prof in profiles:
            for h in range(prof.n_hours):
                w.writerow([prof.day_index, h + 1, f"{prof.t_a[h]:.10g}",
                            f"{prof.t_x[h]:.10g}", f"{prof.q_i[h]:.10g}"])


def read_env_csv(path: str | Path) -> list[EnvProfile]:
    by_day: dict[int, list[list[float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            by_day.setdefault(int(row["day"]), []).append(
                [float(row["t_a"]), float(row["t_x"]), float(row["q_i"])])
    out = []
    for day in sorted(by_day):
        arr = np.asarray(by_day[day])
        out.append(EnvProfile(day_index=day, t_a=arr[:, 0], t_x=arr[:, 1], q_i=arr[:, 2]))
    return out


def write_price_csv(path: str | Path, profiles: list[PriceProfile]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "hour", "c", "l", "c_min", "c_max"])
        for day, prof in enumerate(profiles, start=1):
            for h in range(prof.n_hours):
                w.writerow([day, h + 1, f"{prof.c[h]:.10g}", f"{prof.l[h]:.10g}",
                            f"{prof.c_min[h]:.10g}", f"{prof.c_max[h]:.10g}"])


def read_price_csv(path: str | Path) -> list[PriceProfile]:
    by_day: dict[int, list[list[float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            by_day.setdefault(int(row["day"]), []).append(
                [float(row["c"]), float(row["l"]), float(row["c_min"]), float(row["c_max"])])
    out = []
    for day in sorted(by_day):
        arr = np.asarray(by_day[day])
        out.append(PriceProfile(c=arr[:, 0], l=arr[:, 1], c_min=arr[:, 2], c_max=arr[:, 3]))
    return out


_BUILDING_FIELDS = ("c_in", "c_m", "r_x", "r_a", "r_m", "cop", "p_max")


def write_building_config(path: str | Path, building: RcBuilding) -> None:
    lines = [f"{name} = {getattr(building, name):.10g}" for name in _BUILDING_FIELDS]
    Path(path).write_text("\n".join(lines) + "\n")


def read_building_config(path: str | Path) -> RcBuilding:
    """Parse a flat `key = value` text file into an RcBuilding."""
    values: dict[str, float] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = float(val)
    missing = [name for name in _BUILDING_FIELDS if name not in values]
    if missing:
        raise ValueError(f"{path}: missing building parameters {missing}")
    return RcBuilding(**{name: values[name] for name in _BUILDING_FIELDS})

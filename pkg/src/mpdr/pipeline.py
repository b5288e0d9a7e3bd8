"""Closed-loop orchestration: history generation, model bootstrapping,
online learning of both networks, and the voltage-cap case study.

Day-by-day flow mirrors daily operation: the DSO prices, each building
class re-optimizes its HVAC schedule at the announced price, the dispatch
runs against the RC plant, measurements append to the training records,
and the networks retrain periodically on a sliding window.  Every step is
a pure function of the scenario seed.
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dr as dr_mod
from . import envgen, gridflow, narx, pricing
from .nlp import NlpOptions
from .whitebox import DayTail, rollout

log = logging.getLogger(__name__)

BUILTIN_FEEDER = Path(__file__).parent / "data" / "feeder123.txt"


class GateNotReachedError(RuntimeError):
    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = curve


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BuildingClass:
    name: str
    building: envgen.RcBuilding
    t_min_occ: float = 20.0
    t_max_occ: float = 25.0
    t_min_unocc: float = 16.0
    t_max_unocc: float = 30.0
    occ_start: int = 8
    occ_end: int = 19
    ramp_fraction: float = 0.5
    n_sensitive_per_bus: int = 9
    n_conventional_per_bus: int = 3
    setpoint: float = 25.0

    def comfort(self, n_hours: int = 24) -> tuple[np.ndarray, np.ndarray]:
        hours = np.arange(1, n_hours + 1)
        occ = (hours >= self.occ_start) & (hours <= self.occ_end)
        return (np.where(occ, self.t_min_occ, self.t_min_unocc),
                np.where(occ, self.t_max_occ, self.t_max_unocc))

    def ramps(self) -> tuple[float, float]:
        r = self.ramp_fraction * self.building.p_max
        return -r, r


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 42
    n_days_history: int = 50
    n_days_online_dr: int = 60
    n_days_online_mp: int = 60
    building_retrain_period: int = 1
    mp_retrain_period: int = 5
    online_window_days: int = 45
    gate_threshold: float = 0.99
    gate_days: int = 5
    feeder_path: str = "builtin"
    dv_max: float = 0.06
    peak_window: tuple[int, int] = (12, 18)
    price_ramp: float = 0.08          # C_P = -C_N, $/kWh per hour
    season: envgen.SeasonParams = field(default_factory=envgen.SeasonParams)
    classes: tuple[BuildingClass, ...] = ()
    narx_search: narx.SearchRange = field(default_factory=lambda: narx.SearchRange(
        env_delays=(1,), ctrl_delays=(1,), fb_delays=(1, 2), n_hidden=(6,)))
    mp_search: narx.SearchRange = field(default_factory=lambda: narx.SearchRange(
        env_delays=(1,), ctrl_delays=(2,), fb_delays=(2,), n_hidden=(6,)))
    nmse_threshold: float = 0.95
    mp_nmse_threshold: float = 0.85
    hyper: narx.TrainHyper = field(default_factory=narx.TrainHyper)
    online_hyper: narx.TrainHyper = field(default_factory=lambda: narx.TrainHyper(
        max_epochs=3000, patience=150))

    def __post_init__(self):
        if self.n_days_history < 3:
            raise ConfigError("need at least three history days")
        if min(self.building_retrain_period, self.mp_retrain_period) < 1:
            raise ConfigError("retrain periods must be >= 1 day")
        if not self.classes:
            object.__setattr__(self, "classes", (default_building_class(),))

    def feeder_file(self) -> Path:
        if self.feeder_path == "builtin":
            return BUILTIN_FEEDER
        return Path(self.feeder_path)


def default_building_class(name: str = "classA") -> BuildingClass:
    return BuildingClass(name=name, building=envgen.RcBuilding(
        c_in=8.0, c_m=25.0, r_x=2.5, r_a=2.0, r_m=0.6, cop=2.8, p_max=16.32))


def default_scenario() -> ScenarioConfig:
    slow = envgen.RcBuilding(c_in=9.0, c_m=32.0, r_x=2.8, r_a=2.2, r_m=0.7, cop=3.0, p_max=16.32)
    return ScenarioConfig(classes=(
        replace(default_building_class("classA"), n_sensitive_per_bus=5),
        BuildingClass(name="classB", building=slow, n_sensitive_per_bus=4,
                      n_conventional_per_bus=0),
    ))


# ---------------------------------------------------------------------------
# scenario config file


def _get(cp, section, key, cast, default):
    if cp.has_option(section, key):
        raw = cp.get(section, key)
        try:
            if cast is bool:
                return cp.getboolean(section, key)
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc
    return default


def _int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.replace(",", " ").split())


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Parse an INI scenario file; unspecified values keep their defaults."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read scenario config {path}")
    base = default_scenario()
    sc = "scenario"
    season = envgen.SeasonParams(**{
        name: _get(cp, "season", name, float, getattr(envgen.SeasonParams(), name))
        for name in ("t_x_mean", "t_x_amplitude", "t_x_noise", "t_a_base", "t_a_noise",
                     "q_base", "q_peak", "q_noise", "day_drift")
    }) if cp.has_section("season") else base.season

    classes = []
    for section in cp.sections():
        if not section.startswith("building"):
            continue
        name = section.split(".", 1)[1] if "." in section else "classA"
        bld = envgen.RcBuilding(**{k: _get(cp, section, k, float,
                                           getattr(default_building_class().building, k))
                                   for k in ("c_in", "c_m", "r_x", "r_a", "r_m", "cop", "p_max")})
        proto = default_building_class(name)
        classes.append(BuildingClass(
            name=name, building=bld,
            t_min_occ=_get(cp, section, "t_min_occ", float, proto.t_min_occ),
            t_max_occ=_get(cp, section, "t_max_occ", float, proto.t_max_occ),
            t_min_unocc=_get(cp, section, "t_min_unocc", float, proto.t_min_unocc),
            t_max_unocc=_get(cp, section, "t_max_unocc", float, proto.t_max_unocc),
            occ_start=_get(cp, section, "occ_start", int, proto.occ_start),
            occ_end=_get(cp, section, "occ_end", int, proto.occ_end),
            ramp_fraction=_get(cp, section, "ramp_fraction", float, proto.ramp_fraction),
            n_sensitive_per_bus=_get(cp, section, "n_sensitive_per_bus", int,
                                     proto.n_sensitive_per_bus),
            n_conventional_per_bus=_get(cp, section, "n_conventional_per_bus", int,
                                        proto.n_conventional_per_bus),
            setpoint=_get(cp, section, "setpoint", float, proto.setpoint)))

    def search(section, fallback):
        if not cp.has_section(section):
            return fallback
        return narx.SearchRange(
            env_delays=_int_tuple(cp.get(section, "env_delays", fallback=",".join(
                str(v) for v in fallback.env_delays))),
            ctrl_delays=_int_tuple(cp.get(section, "ctrl_delays", fallback=",".join(
                str(v) for v in fallback.ctrl_delays))),
            fb_delays=_int_tuple(cp.get(section, "fb_delays", fallback=",".join(
                str(v) for v in fallback.fb_delays))),
            n_hidden=_int_tuple(cp.get(section, "hidden", fallback=",".join(
                str(v) for v in fallback.n_hidden))))

    return ScenarioConfig(
        seed=_get(cp, sc, "seed", int, base.seed),
        n_days_history=_get(cp, sc, "n_days_history", int, base.n_days_history),
        n_days_online_dr=_get(cp, sc, "n_days_online_dr", int, base.n_days_online_dr),
        n_days_online_mp=_get(cp, sc, "n_days_online_mp", int, base.n_days_online_mp),
        building_retrain_period=_get(cp, sc, "building_retrain_period", int,
                                     base.building_retrain_period),
        mp_retrain_period=_get(cp, sc, "mp_retrain_period", int, base.mp_retrain_period),
        online_window_days=_get(cp, sc, "online_window_days", int, base.online_window_days),
        gate_threshold=_get(cp, sc, "gate_threshold", float, base.gate_threshold),
        gate_days=_get(cp, sc, "gate_days", int, base.gate_days),
        feeder_path=_get(cp, sc, "feeder", str, base.feeder_path),
        dv_max=_get(cp, sc, "dv_max", float, base.dv_max),
        peak_window=(_get(cp, sc, "peak_start", int, base.peak_window[0]),
                     _get(cp, sc, "peak_end", int, base.peak_window[1])),
        price_ramp=_get(cp, sc, "price_ramp", float, base.price_ramp),
        season=season,
        classes=tuple(classes) or base.classes,
        narx_search=search("narx", base.narx_search),
        mp_search=search("mp", base.mp_search),
        nmse_threshold=_get(cp, sc, "nmse_threshold", float, base.nmse_threshold),
        mp_nmse_threshold=_get(cp, sc, "mp_nmse_threshold", float, base.mp_nmse_threshold),
    )


# ---------------------------------------------------------------------------
# learning curves


@dataclass
class LearningCurve:
    days: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.days = np.asarray(self.days, dtype=int)
        self.values = np.asarray(self.values, dtype=float)

    @property
    def slope(self) -> float:
        """Least-squares slope of value against day index."""
        if len(self.days) < 2:
            return 0.0
        return float(np.polyfit(self.days.astype(float), self.values, 1)[0])

    def moving_average(self, window: int = 10) -> np.ndarray:
        if len(self.values) < window:
            return self.values.copy()
        kernel = np.ones(window) / window
        return np.convolve(self.values, kernel, mode="valid")


# ---------------------------------------------------------------------------
# per-class closed-loop state


@dataclass
class ClassState:
    spec: BuildingClass
    data: narx.TrainingSet
    plant: tuple[float, float]
    params_a: narx.NarxParams | None = None
    params_m: narx.NarxParams | None = None
    meta: narx.TrainingSet | None = None
    conv_plant: tuple[float, float] = (25.0, 25.0)

    def building_tails(self, arch: narx.NarxArch) -> DayTail:
        env = self.data.env
        return DayTail(env[len(env) - arch.n_env_delays:] if arch.n_env_delays else
                       np.zeros((0, 3)),
                       self.data.ctrl[len(self.data.ctrl) - arch.n_ctrl_delays:]
                       if arch.n_ctrl_delays else [],
                       self.data.target[len(self.data.target) - arch.n_fb_delays:]
                       if arch.n_fb_delays else [])

    def meta_tails(self, arch: narx.NarxArch) -> DayTail:
        m = self.meta
        return DayTail(m.env[len(m.env) - arch.n_env_delays:] if arch.n_env_delays else
                       np.zeros((0, 3)),
                       m.ctrl[len(m.ctrl) - arch.n_ctrl_delays:] if arch.n_ctrl_delays else [],
                       m.target[len(m.target) - arch.n_fb_delays:] if arch.n_fb_delays else [])


def _day_rows(day: int, env: envgen.EnvProfile, ctrl: np.ndarray,
              target: np.ndarray, role: str) -> narx.TrainingSet:
    n = env.n_hours
    return narx.TrainingSet(day=np.full(n, day), hour=np.arange(1, n + 1),
                            env=env.stacked(), ctrl=np.asarray(ctrl, dtype=float),
                            target=np.asarray(target, dtype=float), role=role)


# ---------------------------------------------------------------------------
# stage 1: history and the building-model bootstrap


def generate_history(config: ScenarioConfig) -> tuple[dict[str, ClassState],
                                                      list[envgen.PriceProfile]]:
    """Non-DR thermostat operation for days 0..n_days_history.

    Day 0 only seeds tails; returns per-class states whose records cover
    all history days, plus the per-day price profiles (day index order).
    """
    states = {}
    prices = []
    cap, wholesale = envgen.default_tou_cap(), envgen.default_wholesale()
    for cls in config.classes:
        plant = (cls.setpoint, cls.setpoint)
        data = None
        for day in range(0, config.n_days_history + 1):
            env = envgen.generate_environment(day, config.season, config.seed)
            sched = dr_mod.non_dr_baseline(env, cls.building, cls.setpoint,
                                           (cls.occ_start, cls.occ_end), init_state=plant)
            trace, plant = envgen.simulate_day_states(cls.building, plant, sched, env)
            rows = _day_rows(day, env, sched, trace, "building")
            data = rows if data is None else data.append_day(rows)
        states[cls.name] = ClassState(spec=cls, data=data, plant=plant,
                                      conv_plant=plant)
    for day in range(0, config.n_days_history + 1):
        prices.append(envgen.generate_price_day(day, config.seed, cap, wholesale))
    return states, prices


def bootstrap_building_model(config: ScenarioConfig,
                             states: dict[str, ClassState] | None = None
                             ) -> dict[str, ClassState]:
    """Architecture selection + initial training per building class."""
    if states is None:
        states, _ = generate_history(config)
    for name, st in states.items():
        arch, params = narx.select_architecture(st.data, config.narx_search,
                                                config.nmse_threshold, config.hyper,
                                                seed=config.seed)
        st.params_a = params
        log.info("bootstrap %s: arch=%s val_nmse=%.4f", name, arch,
                 narx.validation_nmse(st.data, params))
    return states


# ---------------------------------------------------------------------------
# stage 2: DR online learning against the plant


def _dr_problem(config: ScenarioConfig, st: ClassState, env: envgen.EnvProfile,
                price: envgen.PriceProfile) -> dr_mod.DrProblem:
    t_min, t_max = st.spec.comfort(env.n_hours)
    rn, rp = st.spec.ramps()
    return dr_mod.DrProblem(params_a=st.params_a, price=price, env=env,
                            tails=st.building_tails(st.params_a.arch),
                            t_min=t_min, t_max=t_max, p_max=st.spec.building.p_max,
                            ramp_neg=rn, ramp_pos=rp)


def run_dr_online_learning(config: ScenarioConfig, states: dict[str, ClassState],
                           opts: NlpOptions | None = None,
                           require_gate: bool = True) -> tuple[dict[str, ClassState],
                                                               LearningCurve, int]:
    """Daily DR dispatch against the plant with periodic retraining.

    Returns the updated states, the e(T) learning curve (averaged over
    classes), and the day index at which the accuracy gate fired.
    """
    cap, wholesale = envgen.default_tou_cap(), envgen.default_wholesale()
    days, values = [], []
    streak = 0
    gate_day = -1
    first = config.n_days_history + 1
    for day in range(first, first + config.n_days_online_dr):
        env = envgen.generate_environment(day, config.season, config.seed)
        price = envgen.generate_price_day(day, config.seed, cap, wholesale)
        day_scores = []
        for st in states.values():
            sol = dr_mod.solve_dr(_dr_problem(config, st, env, price), opts)
            measured, st.plant = envgen.simulate_day_states(
                st.spec.building, st.plant, sol.p_opt, env)
            day_scores.append(narx.nmse(sol.t_est, measured))
            st.data = st.data.append_day(_day_rows(day, env, sol.p_opt, measured, "building"))
            if (day - first + 1) % config.building_retrain_period == 0:
                st.params_a = narx.online_update(st.params_a, st.data,
                                                 config.online_window_days,
                                                 config.online_hyper, seed=config.seed)
        e_t = float(np.mean(day_scores))
        days.append(day)
        values.append(e_t)
        streak = streak + 1 if e_t >= config.gate_threshold else 0
        if streak >= config.gate_days and gate_day < 0:
            gate_day = day
            break
    curve = LearningCurve(np.asarray(days), np.asarray(values))
    if gate_day < 0 and require_gate:
        raise GateNotReachedError(
            f"e(T) never held >= {config.gate_threshold} for {config.gate_days} "
            f"consecutive days within {config.n_days_online_dr} days "
            f"(final e(T) {values[-1]:.4f})", curve)
    return states, curve, gate_day


# ---------------------------------------------------------------------------
# stage 3: meta-prediction dataset and bootstrap


def generate_mp_dataset(config: ScenarioConfig, states: dict[str, ClassState],
                        prices: list[envgen.PriceProfile],
                        opts: NlpOptions | None = None) -> dict[str, ClassState]:
    """Solve the DR problem offline for every history day and collect
    (t, E, C, P_opt) records per class; infeasible days are skipped."""
    for name, st in states.items():
        history = st.data
        meta = None
        # chain tails through the offline solutions themselves
        chain = {"ctrl": history.ctrl[history.day == 0],
                 "target": history.target[history.day == 0]}
        for day in range(1, config.n_days_history + 1):
            env_rows = history.env[history.day == day]
            env = envgen.EnvProfile(day_index=day, t_a=env_rows[:, 0], t_x=env_rows[:, 1],
                                    q_i=env_rows[:, 2])
            price = prices[day]
            arch = st.params_a.arch
            prev_env = history.env[history.day == day - 1]
            tails = DayTail(prev_env[len(prev_env) - arch.n_env_delays:]
                            if arch.n_env_delays else np.zeros((0, 3)),
                            chain["ctrl"][len(chain["ctrl"]) - arch.n_ctrl_delays:]
                            if arch.n_ctrl_delays else [],
                            chain["target"][len(chain["target"]) - arch.n_fb_delays:]
                            if arch.n_fb_delays else [])
            t_min, t_max = st.spec.comfort(env.n_hours)
            rn, rp = st.spec.ramps()
            prob = dr_mod.DrProblem(params_a=st.params_a, price=price, env=env, tails=tails,
                                    t_min=t_min, t_max=t_max, p_max=st.spec.building.p_max,
                                    ramp_neg=rn, ramp_pos=rp)
            sol = dr_mod.solve_dr(prob, opts)
            if sol.diagnostics.status == "infeasible":
                log.warning("mp dataset %s: day %d infeasible, skipped", name, day)
                continue
            rows = _day_rows(day, env, price.c, sol.p_opt, "meta")
            meta = rows if meta is None else meta.append_day(rows)
            chain = {"ctrl": sol.p_opt, "target": sol.t_est}
        st.meta = meta
    return states


def train_mp(config: ScenarioConfig, states: dict[str, ClassState]) -> dict[str, ClassState]:
    for name, st in states.items():
        if st.meta is None:
            raise ValueError(f"class {name}: no meta dataset; run generate_mp_dataset first")
        arch, params = narx.select_architecture(st.meta, config.mp_search,
                                                config.mp_nmse_threshold, config.hyper,
                                                seed=config.seed)
        st.params_m = params
        log.info("mp bootstrap %s: arch=%s val_nmse=%.4f", name, arch,
                 narx.validation_nmse(st.meta, params))
    return states


# ---------------------------------------------------------------------------
# stage 4: pricing online learning


def conventional_profile(config: ScenarioConfig, states: dict[str, ClassState],
                         env: envgen.EnvProfile, advance: bool = False) -> np.ndarray:
    """Aggregate conventional-unit load per HVAC bus (thermostat behavior,
    price-insensitive).  Uses and optionally advances the conventional
    plant state of each class."""
    feeder = _feeder_cache(config)
    per_bus = np.zeros((len(feeder.hvac_buses), env.n_hours))
    for st in states.values():
        n_conv = st.spec.n_conventional_per_bus
        if n_conv == 0:
            continue
        sched = dr_mod.non_dr_baseline(env, st.spec.building, st.spec.setpoint,
                                       (st.spec.occ_start, st.spec.occ_end),
                                       init_state=st.conv_plant)
        _, final = envgen.simulate_day_states(st.spec.building, st.conv_plant, sched, env)
        if advance:
            st.conv_plant = final
        per_bus += n_conv * sched[None, :]
    return per_bus


_FEEDER_CACHE: dict[str, gridflow.Feeder] = {}
_SENS_CACHE: dict[str, list[gridflow.Sensitivities]] = {}


def _feeder_cache(config: ScenarioConfig) -> gridflow.Feeder:
    key = str(config.feeder_file())
    if key not in _FEEDER_CACHE:
        _FEEDER_CACHE[key] = gridflow.load_feeder(config.feeder_file())
    return _FEEDER_CACHE[key]


def _sens_cache(config: ScenarioConfig) -> list[gridflow.Sensitivities]:
    key = str(config.feeder_file())
    if key not in _SENS_CACHE:
        _SENS_CACHE[key] = gridflow.hourly_sensitivities(_feeder_cache(config))
    return _SENS_CACHE[key]


def _pricing_problem(config: ScenarioConfig, states: dict[str, ClassState],
                     env: envgen.EnvProfile, conventional: np.ndarray,
                     dv_max: float | None = None,
                     c_prev: float | None = None) -> pricing.PricingProblem:
    feeder = _feeder_cache(config)
    sens = _sens_cache(config)
    n_hv = len(feeder.hvac_buses)
    groups = []
    for st in states.values():
        counts = np.full(n_hv, float(st.spec.n_sensitive_per_bus))
        groups.append(pricing.UnitGroup(label=st.spec.name, mp=st.params_m,
                                        env_stacked=env.stacked(),
                                        tails=st.meta_tails(st.params_m.arch),
                                        bus_counts=counts))
    wholesale = envgen.default_wholesale()
    cap = envgen.default_tou_cap()
    return pricing.PricingProblem(groups=groups, wholesale=wholesale, c_min=wholesale,
                                  c_max=cap, ramp_neg=-config.price_ramp,
                                  ramp_pos=config.price_ramp, feeder=feeder, sens=sens,
                                  conventional=conventional,
                                  dv_max=dv_max if dv_max is not None else config.dv_max,
                                  peak_window=config.peak_window, c_prev=c_prev)


def run_pricing_online_learning(config: ScenarioConfig, states: dict[str, ClassState],
                                start_day: int, opts: NlpOptions | None = None
                                ) -> tuple[dict[str, ClassState], LearningCurve]:
    """Daily pricing + per-class DR response + online retraining of both
    networks.  Returns updated states and the e(P) curve (class average)."""
    days, values = [], []
    for step in range(config.n_days_online_mp):
        day = start_day + step
        env = envgen.generate_environment(day, config.season, config.seed)
        conventional = conventional_profile(config, states, env, advance=True)
        c_prev = None
        first_meta = next(iter(states.values())).meta
        if first_meta is not None and len(first_meta):
            c_prev = float(first_meta.ctrl[-1])
        prob = _pricing_problem(config, states, env, conventional, c_prev=c_prev)
        psol = pricing.solve_pricing(prob, opts)
        if psol.diagnostics.status == "infeasible":
            log.warning("pricing day %d infeasible (%s); falling back to cap profile",
                        day, psol.diagnostics.message)
            c_opt = prob.c_max.copy()
            p_pred = {g.label: rollout(g.mp, g.tails, g.env_stacked, c_opt)
                      for g in prob.groups}
        else:
            c_opt = psol.c_opt
            p_pred = psol.p_pred
        price = envgen.PriceProfile(c=c_opt, l=prob.wholesale, c_min=prob.c_min,
                                    c_max=prob.c_max)
        day_scores = []
        for st in states.values():
            sol = dr_mod.solve_dr(_dr_problem(config, st, env, price), opts)
            measured, st.plant = envgen.simulate_day_states(
                st.spec.building, st.plant, sol.p_opt, env)
            day_scores.append(narx.nmse(p_pred[st.spec.name], sol.p_opt))
            st.data = st.data.append_day(_day_rows(day, env, sol.p_opt, measured, "building"))
            st.meta = st.meta.append_day(_day_rows(day, env, c_opt, sol.p_opt, "meta"))
            if (step + 1) % config.mp_retrain_period == 0:
                st.params_m = narx.online_update(st.params_m, st.meta,
                                                 config.online_window_days,
                                                 config.online_hyper, seed=config.seed)
            if (step + 1) % config.building_retrain_period == 0:
                st.params_a = narx.online_update(st.params_a, st.data,
                                                 config.online_window_days,
                                                 config.online_hyper, seed=config.seed)
        days.append(day)
        values.append(float(np.mean(day_scores)))
    return states, LearningCurve(np.asarray(days), np.asarray(values))


# ---------------------------------------------------------------------------
# stage 5: case study sweep


@dataclass
class CaseStudyRow:
    dv_max: float
    j_d: float
    j_c_total: float
    pre_peak_energy: float
    max_abs_dv: float
    binding: bool
    max_abs_dv_replay: float
    comfort_excess: float
    status: str


@dataclass
class CaseStudyReport:
    day: int
    rows: list[CaseStudyRow]
    prices: dict[float, np.ndarray]
    dispatch_mp: dict[float, dict[str, np.ndarray]]
    dispatch_dr: dict[float, dict[str, np.ndarray]]
    dispatch_rc: dict[float, dict[str, np.ndarray]]
    temperatures: dict[float, dict[str, np.ndarray]]
    deviations: dict[float, np.ndarray]


def run_case_study(config: ScenarioConfig, states: dict[str, ClassState],
                   day: int, sweep: list[float],
                   opts: NlpOptions | None = None) -> CaseStudyReport:
    """Pricing + DR + plant/grid replay for each voltage cap in the sweep.

    All caps see the same day, tails, and model parameters, so rows are
    directly comparable.
    """
    env = envgen.generate_environment(day, config.season, config.seed)
    conventional = conventional_profile(config, states, env, advance=False)
    feeder = _feeder_cache(config)
    rows = []
    prices_out, disp_mp, disp_dr, disp_rc, temps_out, devs = {}, {}, {}, {}, {}, {}
    for dv_max in sweep:
        prob = _pricing_problem(config, states, env, conventional, dv_max=dv_max)
        psol = pricing.solve_pricing(prob, opts)
        price = envgen.PriceProfile(c=psol.c_opt, l=prob.wholesale, c_min=prob.c_min,
                                    c_max=prob.c_max)
        dr_disp, rc_disp, temps = {}, {}, {}
        j_c_total = 0.0
        comfort_excess = 0.0
        for st in states.values():
            dsol = dr_mod.solve_dr(_dr_problem(config, st, env, price), opts)
            dr_disp[st.spec.name] = dsol.p_opt
            replay, _ = envgen.simulate_day_states(st.spec.building, st.plant,
                                                   dsol.p_opt, env)
            temps[st.spec.name] = replay
            t_min, t_max = st.spec.comfort(env.n_hours)
            comfort_excess = max(comfort_excess,
                                 float(np.max(np.maximum(replay - t_max, t_min - replay))))
            j_c_total += dsol.j_c * st.spec.n_sensitive_per_bus * len(feeder.hvac_buses)
            rcsol = dr_mod.solve_dr_rc(_dr_problem(config, st, env, price),
                                       st.spec.building, st.plant, opts)
            rc_disp[st.spec.name] = rcsol.p_opt
        # nonlinear replay of grid deviations under the DR dispatch
        dv_replay = np.zeros((feeder.n_bus, env.n_hours))
        totals = conventional.copy()
        for st in states.values():
            totals = totals + np.outer(np.full(len(feeder.hvac_buses),
                                               float(st.spec.n_sensitive_per_bus)),
                                       dr_disp[st.spec.name])
        hv = feeder.hvac_index()
        for t in range(env.n_hours):
            base_v = gridflow.power_flow(feeder, feeder.base_p[:, t], feeder.base_q[:, t])
            loaded = feeder.base_p[:, t].copy()
            loaded[hv] += totals[:, t]
            v = gridflow.power_flow(feeder, loaded, feeder.base_q[:, t])
            dv_replay[:, t] = v - base_v
        t_ps, t_pe = config.peak_window
        peak_lin = float(np.abs(psol.dv[:, t_ps - 1:t_pe]).max())
        peak_replay = float(np.abs(dv_replay[:, t_ps - 1:t_pe]).max())
        pre_peak = float(sum(pricing.total_demand(prob, psol.p_pred)[:t_ps - 1]))
        rows.append(CaseStudyRow(dv_max=dv_max, j_d=psol.j_d, j_c_total=j_c_total,
                                 pre_peak_energy=pre_peak, max_abs_dv=peak_lin,
                                 binding=peak_lin >= 0.98 * dv_max,
                                 max_abs_dv_replay=peak_replay,
                                 comfort_excess=comfort_excess,
                                 status=psol.diagnostics.status))
        prices_out[dv_max] = psol.c_opt
        disp_mp[dv_max] = psol.p_pred
        disp_dr[dv_max] = dr_disp
        disp_rc[dv_max] = rc_disp
        temps_out[dv_max] = temps
        devs[dv_max] = psol.dv
    return CaseStudyReport(day=day, rows=rows, prices=prices_out, dispatch_mp=disp_mp,
                           dispatch_dr=disp_dr, dispatch_rc=disp_rc,
                           temperatures=temps_out, deviations=devs)


# ---------------------------------------------------------------------------
# state persistence (lets the CLI stages compose across processes)


def save_states(out_dir: str | Path, states: dict[str, ClassState]) -> list[str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, st in states.items():
        payload = {
            "day": st.data.day, "hour": st.data.hour, "env": st.data.env,
            "ctrl": st.data.ctrl, "target": st.data.target,
            "plant": np.asarray(st.plant), "conv_plant": np.asarray(st.conv_plant),
        }
        if st.meta is not None:
            payload.update({"m_day": st.meta.day, "m_hour": st.meta.hour,
                            "m_env": st.meta.env, "m_ctrl": st.meta.ctrl,
                            "m_target": st.meta.target})
        path = out_dir / f"state.{name}.npz"
        np.savez_compressed(path, **payload)
        written.append(path.name)
        if st.params_a is not None:
            p = out_dir / f"params_a.{name}.json"
            p.write_text(narx.params_to_json(st.params_a))
            written.append(p.name)
        if st.params_m is not None:
            p = out_dir / f"params_m.{name}.json"
            p.write_text(narx.params_to_json(st.params_m))
            written.append(p.name)
    return written


def load_states(config: ScenarioConfig, state_dir: str | Path) -> dict[str, ClassState]:
    state_dir = Path(state_dir)
    states = {}
    for cls in config.classes:
        path = state_dir / f"state.{cls.name}.npz"
        if not path.exists():
            raise FileNotFoundError(f"no saved state for class {cls.name} in {state_dir}")
        z = np.load(path)
        data = narx.TrainingSet(day=z["day"], hour=z["hour"], env=z["env"],
                                ctrl=z["ctrl"], target=z["target"], role="building")
        meta = None
        if "m_day" in z:
            meta = narx.TrainingSet(day=z["m_day"], hour=z["m_hour"], env=z["m_env"],
                                    ctrl=z["m_ctrl"], target=z["m_target"], role="meta")
        st = ClassState(spec=cls, data=data, plant=tuple(z["plant"]),
                        conv_plant=tuple(z["conv_plant"]), meta=meta)
        pa = state_dir / f"params_a.{cls.name}.json"
        if pa.exists():
            st.params_a = narx.params_from_json(pa.read_text())
        pm = state_dir / f"params_m.{cls.name}.json"
        if pm.exists():
            st.params_m = narx.params_from_json(pm.read_text())
        states[cls.name] = st
    return states

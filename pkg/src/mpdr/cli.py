"""Command-line surface: every pipeline stage as a subcommand with
reproducible CSV artifacts and a run manifest.

Exit codes: 0 success, 1 usage, 2 invalid config, 3 infeasible or
non-converged (diagnostics on stderr).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dr as dr_mod
from . import envgen, gridflow, narx, pipeline, pricing

FMT = "%.10g"


class UsageError(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([(FMT % v) if isinstance(v, float) else v for v in row])


def _manifest(out: Path, command: str, config_path: str | None, seed: int,
              started: float, outputs: list[str], metrics: dict) -> None:
    digest = ""
    if config_path and Path(config_path).exists():
        digest = hashlib.sha256(Path(config_path).read_bytes()).hexdigest()
    doc = {
        "command": command,
        "config": config_path or "(defaults)",
        "config_sha256": digest,
        "seed": seed,
        "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": sorted(outputs),
        "metrics": metrics,
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_config(args) -> pipeline.ScenarioConfig:
    cfg = pipeline.load_scenario(args.config) if args.config else pipeline.default_scenario()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(os.environ.get("MPDR_OUT", args.out))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _states_for(cfg, args, need_mp: bool = False):
    """Load saved state when given, otherwise rebuild deterministically."""
    if getattr(args, "state", None):
        states = pipeline.load_states(cfg, args.state)
        if any(st.params_a is None for st in states.values()):
            states = pipeline.bootstrap_building_model(cfg, states)
    else:
        states = pipeline.bootstrap_building_model(cfg)
    if need_mp and any(st.params_m is None for st in states.values()):
        if any(st.meta is None for st in states.values()):
            _, prices = pipeline.generate_history(cfg)
            states = pipeline.generate_mp_dataset(cfg, states, prices)
        states = pipeline.train_mp(cfg, states)
    return states


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    started = time.time()
    envs = [envgen.generate_environment(d, cfg.season, cfg.seed)
            for d in range(0, cfg.n_days_history + 1)]
    cap, wholesale = envgen.default_tou_cap(), envgen.default_wholesale()
    prices = [envgen.generate_price_day(d, cfg.seed, cap, wholesale)
              for d in range(0, cfg.n_days_history + 1)]
    envgen.write_env_csv(out / "environment.csv", envs)
    envgen.write_price_csv(out / "prices.csv", prices)
    outputs = ["environment.csv", "prices.csv"]
    for cls in cfg.classes:
        name = f"building.{cls.name}.cfg"
        envgen.write_building_config(out / name, cls.building)
        outputs.append(name)
    _manifest(out, "gen-data", args.config, cfg.seed, started, outputs,
              {"days": cfg.n_days_history + 1})
    return 0


def cmd_train_building(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    started = time.time()
    states = pipeline.bootstrap_building_model(cfg)
    outputs = pipeline.save_states(out, states)
    metrics = {name: {"val_nmse": narx.validation_nmse(st.data, st.params_a)}
               for name, st in states.items()}
    _manifest(out, "train-building", args.config, cfg.seed, started, outputs, metrics)
    return 0


def cmd_run_dr(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    started = time.time()
    states = _states_for(cfg, args)
    day = args.day if args.day is not None else cfg.n_days_history + 1
    env = envgen.generate_environment(day, cfg.season, cfg.seed)
    price = envgen.generate_price_day(day, cfg.seed, envgen.default_tou_cap(),
                                      envgen.default_wholesale())
    outputs = []
    metrics = {}
    worst_status = "converged"
    for name, st in states.items():
        sol = dr_mod.solve_dr(pipeline._dr_problem(cfg, st, env, price))
        fname = f"schedule.{name}.csv"
        _write_csv(out / fname, ["hour", "p_opt", "t_est", "c"],
                   [(h + 1, float(sol.p_opt[h]), float(sol.t_est[h]), float(price.c[h]))
                    for h in range(env.n_hours)])
        outputs.append(fname)
        metrics[name] = {"j_c": sol.j_c, "status": sol.diagnostics.status,
                         "max_eq_violation": sol.diagnostics.max_eq_violation}
        if sol.diagnostics.status == "infeasible":
            worst_status = "infeasible"
            print(f"DR infeasible for {name}: {sol.diagnostics.message}", file=sys.stderr)
    _manifest(out, "run-dr", args.config, cfg.seed, started, outputs,
              {"day": day, **metrics})
    return 3 if worst_status == "infeasible" else 0


def cmd_gen_mp_data(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    started = time.time()
    states = _states_for(cfg, args)
    _, prices = pipeline.generate_history(cfg)
    states = pipeline.generate_mp_dataset(cfg, states, prices)
    outputs = pipeline.save_states(out, states)
    for name, st in states.items():
        fname = f"mp_dataset.{name}.csv"
        _write_csv(out / fname, ["day", "hour", "t_a", "t_x", "q_i", "c", "p_opt"],
                   [(int(st.meta.day[i]), int(st.meta.hour[i]), *map(float, st.meta.env[i]),
                     float(st.meta.ctrl[i]), float(st.meta.target[i]))
                    for i in range(len(st.meta))])
        outputs.append(fname)
    _manifest(out, "gen-mp-data", args.config, cfg.seed, started, outputs,
              {name: {"rows": len(st.meta)} for name, st in states.items()})
    return 0


def cmd_train_mp(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    started = time.time()
    states = _states_for(cfg, args, need_mp=True)
    outputs = pipeline.save_states(out, states)
    metrics = {name: {"val_nmse": narx.validation_nmse(st.meta, st.params_m)}
               for name, st in states.items()}
    _manifest(out, "train-mp", args.config, cfg.seed, started, outputs, metrics)
    return 0


def _write_pricing_outputs(out: Path, cfg, prob, psol) -> list[str]:
    outputs = []
    _write_csv(out / "price.csv", ["hour", "c_opt", "l", "c_max"],
               [(h + 1, float(psol.c_opt[h]), float(prob.wholesale[h]), float(prob.c_max[h]))
                for h in range(prob.horizon)])
    outputs.append("price.csv")
    rows = []
    for label, p in sorted(psol.p_pred.items()):
        rows += [(h + 1, label, float(p[h])) for h in range(prob.horizon)]
    _write_csv(out / "dispatch.csv", ["hour", "unit", "p_pred"], rows)
    outputs.append("dispatch.csv")
    feeder = prob.feeder
    dev_rows = []
    for h in range(prob.horizon):
        for n, bus in enumerate(feeder.bus_ids):
            dev_rows.append((h + 1, bus, float(psol.dv[n, h])))
    _write_csv(out / "deviation.csv", ["hour", "bus", "dv"], dev_rows)
    outputs.append("deviation.csv")
    return outputs


def cmd_run_pricing(args) -> int:
    cfg = _load_config(args)
    if args.dvmax is not None:
        cfg = replace(cfg, dv_max=args.dvmax)
    out = _out_dir(args)
    started = time.time()
    states = _states_for(cfg, args, need_mp=True)
    day = args.day if args.day is not None else cfg.n_days_history + 1
    env = envgen.generate_environment(day, cfg.season, cfg.seed)
    conventional = pipeline.conventional_profile(cfg, states, env, advance=False)
    prob = pipeline._pricing_problem(cfg, states, env, conventional)
    psol = pricing.solve_pricing(prob)
    outputs = _write_pricing_outputs(out, cfg, prob, psol)
    _manifest(out, "run-pricing", args.config, cfg.seed, started, outputs,
              {"day": day, "j_d": psol.j_d, "binding_hours": psol.binding_hours,
               "status": psol.diagnostics.status})
    if psol.diagnostics.status == "infeasible":
        print(f"pricing infeasible: {psol.diagnostics.message}", file=sys.stderr)
        return 3
    return 0


def cmd_closed_loop(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    started = time.time()
    states, prices = pipeline.generate_history(cfg)
    states = pipeline.bootstrap_building_model(cfg, states)
    try:
        states, curve_t, gate_day = pipeline.run_dr_online_learning(cfg, states)
    except pipeline.GateNotReachedError as exc:
        print(f"learning gate not reached: {exc}", file=sys.stderr)
        if exc.curve is not None:
            _write_csv(out / "curve_et.csv", ["day", "e_t"],
                       list(zip(exc.curve.days.tolist(), map(float, exc.curve.values))))
        return 3
    states = pipeline.generate_mp_dataset(cfg, states, prices)
    states = pipeline.train_mp(cfg, states)
    states, curve_p = pipeline.run_pricing_online_learning(cfg, states, gate_day + 1)
    outputs = pipeline.save_states(out, states)
    _write_csv(out / "curve_et.csv", ["day", "e_t"],
               list(zip(curve_t.days.tolist(), map(float, curve_t.values))))
    _write_csv(out / "curve_ep.csv", ["day", "e_p"],
               list(zip(curve_p.days.tolist(), map(float, curve_p.values))))
    outputs += ["curve_et.csv", "curve_ep.csv"]
    metrics = {"gate_day": gate_day, "final_e_t": float(curve_t.values[-1]),
               "final_e_p": float(curve_p.values[-1]), "e_p_slope": curve_p.slope,
               "next_day": int(curve_p.days[-1]) + 1}
    (out / "run_meta.json").write_text(json.dumps(metrics, sort_keys=True) + "\n")
    outputs.append("run_meta.json")
    _manifest(out, "closed-loop", args.config, cfg.seed, started, outputs, metrics)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    started = time.time()
    sweep = [float(v) for v in args.dvmax.split(",")] if args.dvmax else [0.07, 0.06, 0.05]
    states = _states_for(cfg, args, need_mp=True)
    if getattr(args, "state", None) and (Path(args.state) / "run_meta.json").exists():
        day = json.loads((Path(args.state) / "run_meta.json").read_text())["next_day"]
    else:
        day = args.day if args.day is not None else cfg.n_days_history + 1
    report = pipeline.run_case_study(cfg, states, day, sweep)
    outputs = []
    for dv_max, row in zip(sweep, report.rows):
        sub = out / f"dvmax_{dv_max:g}"
        sub.mkdir(parents=True, exist_ok=True)
        _write_csv(sub / "price.csv", ["hour", "c_opt"],
                   [(h + 1, float(report.prices[dv_max][h])) for h in range(24)])
        rows = []
        for label in sorted(report.dispatch_mp[dv_max]):
            for h in range(24):
                rows.append((h + 1, label, float(report.dispatch_mp[dv_max][label][h]),
                             float(report.dispatch_dr[dv_max][label][h]),
                             float(report.dispatch_rc[dv_max][label][h]),
                             float(report.temperatures[dv_max][label][h])))
        _write_csv(sub / "dispatch_compare.csv",
                   ["hour", "unit", "p_mp", "p_dr", "p_rc", "t_replay"], rows)
        outputs += [f"dvmax_{dv_max:g}/price.csv", f"dvmax_{dv_max:g}/dispatch_compare.csv"]
    _write_csv(out / "sweep.csv",
               ["dv_max", "j_d", "j_c_total", "pre_peak_energy", "max_abs_dv",
                "binding", "max_abs_dv_replay", "comfort_excess", "status"],
               [(r.dv_max, r.j_d, r.j_c_total, r.pre_peak_energy, r.max_abs_dv,
                 int(r.binding), r.max_abs_dv_replay, r.comfort_excess, r.status)
                for r in report.rows])
    outputs.append("sweep.csv")
    _manifest(out, "sweep", args.config, cfg.seed, started, outputs,
              {"day": report.day,
               "j_d": {f"{r.dv_max:g}": r.j_d for r in report.rows}})
    if any(r.status == "infeasible" for r in report.rows):
        print("one or more sweep cases infeasible", file=sys.stderr)
        return 3
    return 0


def cmd_report(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run = Path(args.run)
    out = _out_dir(args)
    started = time.time()
    outputs = []
    lines = []

    def read_rows(path):
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))

    for name, col in (("curve_et.csv", "e_t"), ("curve_ep.csv", "e_p")):
        path = run / name
        if not path.exists():
            continue
        rows = read_rows(path)
        days = [int(r["day"]) for r in rows]
        vals = [float(r[col]) for r in rows]
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.plot(days, vals, marker=".")
        ax.set_xlabel("day")
        ax.set_ylabel(col)
        ax.set_title(f"online learning: {col}")
        fig.tight_layout()
        png = f"{col}_curve.png"
        fig.savefig(out / png, dpi=120)
        plt.close(fig)
        outputs.append(png)
        lines.append(f"{col}: {len(vals)} days, final {vals[-1]:.4f}")

    sweep_path = run / "sweep.csv"
    if sweep_path.exists():
        rows = read_rows(sweep_path)
        lines.append("")
        lines.append("dv_max   j_d      j_c_total  pre_peak  max|dv|  binding")
        for r in rows:
            lines.append(f"{float(r['dv_max']):6.3f}  {float(r['j_d']):8.2f}  "
                         f"{float(r['j_c_total']):9.2f}  {float(r['pre_peak_energy']):8.1f}  "
                         f"{float(r['max_abs_dv']):7.4f}  {r['binding']}")
        fig, axes = plt.subplots(1, 2, figsize=(9, 3))
        for sub in sorted(run.glob("dvmax_*")):
            price_rows = read_rows(sub / "price.csv")
            axes[0].plot([int(x["hour"]) for x in price_rows],
                         [float(x["c_opt"]) for x in price_rows], label=sub.name)
            disp = read_rows(sub / "dispatch_compare.csv")
            units = sorted({x["unit"] for x in disp})
            total = np.zeros(24)
            for u in units:
                vals = [float(x["p_mp"]) for x in disp if x["unit"] == u]
                total += np.asarray(vals)
            axes[1].plot(range(1, 25), total, label=sub.name)
        axes[0].set_title("optimal price")
        axes[1].set_title("predicted unit demand")
        for ax in axes:
            ax.set_xlabel("hour")
            ax.legend(fontsize=6)
        fig.tight_layout()
        fig.savefig(out / "sweep_compare.png", dpi=120)
        plt.close(fig)
        outputs.append("sweep_compare.png")

    for name in ("price.csv", "dispatch.csv"):
        path = run / name
        if not path.exists():
            continue
        rows = read_rows(path)
        lines.append(f"{name}: {len(rows)} rows")

    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    outputs.append("summary.txt")
    _manifest(out, "report", args.config, args.seed if args.seed is not None else 0,
              started, outputs, {"source": str(run)})
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mpdr", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, state=True, day=False):
        p.add_argument("--config", help="scenario config file (INI)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", default="out", help="output directory (MPDR_OUT overrides)")
        if state:
            p.add_argument("--state", help="directory with saved pipeline state")
        if day:
            p.add_argument("--day", type=int, help="day index to solve")

    common(sub.add_parser("gen-data", help="write environment/price CSVs"), state=False)
    common(sub.add_parser("train-building", help="bootstrap the building models"),
           state=False)
    common(sub.add_parser("run-dr", help="solve one DR day per class"), day=True)
    common(sub.add_parser("gen-mp-data", help="offline DR solutions as MP records"))
    common(sub.add_parser("train-mp", help="train the meta-prediction models"))
    p = sub.add_parser("run-pricing", help="solve one pricing day")
    common(p, day=True)
    p.add_argument("--dvmax", type=float, help="voltage-deviation cap override, pu")
    common(sub.add_parser("closed-loop", help="full online-learning run"), state=False)
    p = sub.add_parser("sweep", help="voltage-cap case-study sweep")
    common(p, day=True)
    p.add_argument("--dvmax", help="comma list of caps, e.g. 0.07,0.06,0.05")
    p = sub.add_parser("report", help="render CSVs into tables and plots")
    common(p, state=False)
    p.add_argument("--run", required=True, help="run directory to summarize")
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-building": cmd_train_building,
    "run-dr": cmd_run_dr,
    "gen-mp-data": cmd_gen_mp_data,
    "train-mp": cmd_train_mp,
    "run-pricing": cmd_run_pricing,
    "closed-loop": cmd_closed_loop,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (pipeline.ConfigError, gridflow.FeederFormatError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except pipeline.GateNotReachedError as exc:
        print(f"non-converged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

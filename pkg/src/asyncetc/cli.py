"""Command-line entry point.

    asyncetc run CONFIG
    asyncetc example {fig2,fig34,fig56}
    asyncetc check-dwell RUN_DIR_OR_CSV
    asyncetc check-small-gain CONFIG
    asyncetc sweep CONFIG --param k_p --values 0.5,10

Exit status: 0 success, 1 runtime error, 2 configuration error.  Failures
print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from . import scenarios
from .analysis import verify_dwell
from .scenarios import ConfigError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--t-end", type=float, help="simulation horizon in seconds")
    common.add_argument("--step", type=float, help="maximum integration step in seconds")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("--seed", type=int, help="random seed for sampled checks")
    common.add_argument("--format", choices=("csv", "json"), default="json", help="stdout format")

    p = argparse.ArgumentParser(prog="asyncetc", description="Asynchronous event-triggered control simulator")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="simulate a scenario config")
    r.add_argument("config")
    e = sub.add_parser("example", parents=[common], help="run a built-in single-integrator example")
    e.add_argument("name", choices=sorted(scenarios.EXAMPLES))
    d = sub.add_parser("check-dwell", parents=[common], help="dwell-time checks on exported run tables")
    d.add_argument("arc")
    d.add_argument("--tau-p", type=float)
    d.add_argument("--tau-c", type=float)
    d.add_argument("--tau-pi", type=float)
    d.add_argument("--tau-kappa", type=float)
    d.add_argument("--tolerance", type=float, default=1e-4)
    d.add_argument("--offset", type=float, default=1.0, help="constant N0 in j-i <= (t-s)/tau_a + N0")
    d.add_argument("--fail-on-violation", action="store_true")
    g = sub.add_parser("check-small-gain", parents=[common], help="grid check of small-gain conditions")
    g.add_argument("config")
    g.add_argument("--fail-on-violation", action="store_true")
    s = sub.add_parser("sweep", parents=[common], help="run a config over a list of parameter values")
    s.add_argument("config")
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--jobs", type=int, default=1)
    return p


def _apply_overrides(cfg, args):
    solver = cfg.solver
    try:
        if args.t_end is not None:
            solver = dataclasses.replace(solver, t_end=args.t_end)
        if args.step is not None:
            tol = min(solver.event_tolerance, 0.5 * args.step)
            solver = dataclasses.replace(solver, max_step=args.step, event_tolerance=tol)
    except ValueError as exc:
        raise ConfigError(str(exc), "solver") from exc
    cfg.solver = solver
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _emit(data: dict, fmt: str, out):
    if fmt == "json":
        out.write(json.dumps(data, indent=2) + "\n")
        return
    w = csv.writer(out)
    w.writerow(["key", "value"])
    for k, v in data.items():
        w.writerow([k, json.dumps(v) if isinstance(v, (dict, list)) else v])


def _run(cfg, args, out):
    run = scenarios.run_scenario(cfg)
    _emit({"name": cfg.name, **run.summary, "dwell_ok": run.dwell.ok, "files": run.paths}, args.format, out)
    return EXIT_RUNTIME if run.arc.status not in ("t_end", "j_max") else EXIT_OK


def _locate_tables(path: Path):
    if path.is_dir():
        base = path
    else:
        base = path.parent
    traj = base / scenarios.TRAJECTORY_FILE
    evs = base / scenarios.EVENTS_FILE
    if not traj.exists() or not evs.exists():
        raise ConfigError(f"expected {traj.name} and {evs.name} in {str(base)!r}", "arc")
    meta = {}
    summ = base / scenarios.SUMMARY_FILE
    if summ.exists():
        doc = json.loads(summ.read_text())
        conf = doc.get("config", {})
        meta = {
            "tau_p": conf.get("plant", {}).get("tau_min"),
            "tau_pi": conf.get("plant", {}).get("tau_max"),
            "tau_c": conf.get("controller", {}).get("tau_min"),
            "tau_kappa": conf.get("controller", {}).get("tau_max"),
        }
    return traj, evs, meta


def _check_dwell(args, out):
    traj, evs, meta = _locate_tables(Path(args.arc))
    cols, table = scenarios.read_trajectory_csv(traj)
    arc = scenarios.arc_from_tables(cols, table, scenarios.read_events_csv(evs), meta)
    taus = {
        "tau_p": args.tau_p if args.tau_p is not None else meta.get("tau_p"),
        "tau_c": args.tau_c if args.tau_c is not None else meta.get("tau_c"),
        "tau_pi": args.tau_pi if args.tau_pi is not None else meta.get("tau_pi"),
        "tau_kappa": args.tau_kappa if args.tau_kappa is not None else meta.get("tau_kappa"),
    }
    if taus["tau_p"] is None or taus["tau_c"] is None:
        raise ConfigError("tau_p and tau_c unknown: pass --tau-p/--tau-c or keep summary.json beside the tables", "tau_p")
    report = verify_dwell(arc, tolerance=args.tolerance, offset=args.offset, **taus)
    if args.format == "json":
        out.write(json.dumps(report.to_dict(), indent=2) + "\n")
    else:
        w = csv.writer(out)
        w.writerow(["check", "events", "times", "observed", "required"])
        for v in report.violations:
            w.writerow([v["check"], " ".join(map(str, v["events"])), " ".join(map(repr, v["times"])),
                        repr(v["observed"]), repr(v["required"])])
    return EXIT_RUNTIME if (args.fail_on_violation and not report.ok) else EXIT_OK


def _check_small_gain(cfg, args, out):
    report = scenarios.small_gain_for_config(cfg)
    if args.format == "json":
        out.write(report.to_json(indent=2) + "\n")
    else:
        out.write(report.violations_csv())
    if cfg.out_dir:
        d = Path(cfg.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "small_gain.json").write_text(report.to_json(indent=2) + "\n")
        (d / "small_gain_violations.csv").write_text(report.violations_csv())
    return EXIT_RUNTIME if (args.fail_on_violation and not report.ok) else EXIT_OK


def _sweep(cfg, args, out):
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty", "values")
    results = scenarios.run_sweep(cfg, args.param, values, out_dir=cfg.out_dir, jobs=args.jobs)
    rows = [{"param": args.param, "value": v, "dwell_ok": ok, **{k: s[k] for k in _SWEEP_KEYS}} for v, s, ok in results]
    if args.format == "json":
        out.write(json.dumps(rows, indent=2) + "\n")
    else:
        w = csv.DictWriter(out, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


_SWEEP_KEYS = (
    "status",
    "events_total",
    "plant_instants",
    "controller_instants",
    "max_abs_x_p",
    "max_abs_e_p",
    "max_abs_e_u",
    "e_u_growth",
    "x_p_sign_changes",
)


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "check-dwell":
            return _check_dwell(args, out)
        if args.command == "example":
            k_p, tau_p, tau_c = scenarios.EXAMPLES[args.name]
            cfg = scenarios.builtin_integrator_scenario(k_p, tau_p, tau_c)
            cfg.name = args.name
            cfg.out_dir = str(Path("runs") / args.name)
        else:
            cfg = scenarios.load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        if args.command in ("run", "example"):
            return _run(cfg, args, out)
        if args.command == "check-small-gain":
            return _check_small_gain(cfg, args, out)
        return _sweep(cfg, args, out)
    except ConfigError as exc:
        err.write(json.dumps(exc.to_dict()) + "\n")
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable runtime error
        err.write(json.dumps({"error": "runtime", "kind": type(exc).__name__, "message": str(exc)}) + "\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Scenario configuration, the single-integrator example, runs and exports.

Config files are INI-style text with sections ``[scenario]``, ``[plant]``,
``[controller]``, ``[solver]`` and ``[analysis]``; a JSON object with the same
sections and keys is accepted as an equivalent.  Vectors are written as
space-separated numbers and matrices as rows separated by ``;``.  Text after
`` #`` on a line is a comment::

    [plant]
    model = integrator
    tau_min = 1
    tau_max = 60
    x0 = 10

    [controller]
    model = tracking
    k_p = 0.5
    tau_min = 2
    tau_max = 120
"""

from __future__ import annotations

import configparser
import copy
import csv
import dataclasses
import json
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import (
    DwellTimeReport,
    GridSpec,
    StorageReport,
    check_small_gain_system,
    monitor_storage,
    verify_dwell,
)
from .hybrid import EventRecord, HybridArc, HybridTime, Segment, SolverConfig, simulate
from .system import (
    ETCSystem,
    build_closed_loop,
    linear_controller,
    linear_hold,
    linear_plant,
    model_based_hold,
    zoh_hold,
)
from .triggers import QuadraticStorage, QuadraticThreshold, TriggerSpec

__all__ = [
    "ConfigError",
    "PlantConfig",
    "ControllerConfig",
    "AnalysisConfig",
    "ScenarioConfig",
    "RunOutput",
    "EXAMPLES",
    "builtin_integrator_scenario",
    "build_system",
    "load_config",
    "parse_config_text",
    "run_scenario",
    "summarize",
    "read_trajectory_csv",
    "read_events_csv",
    "arc_from_tables",
    "run_sweep",
    "set_param",
    "small_gain_for_config",
]

TRAJECTORY_FILE = "trajectory.csv"
EVENTS_FILE = "events.csv"
SUMMARY_FILE = "summary.json"


class ConfigError(ValueError):
    """Invalid configuration; carries the offending field and line if known."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.field = field
        self.line = line

    def to_dict(self) -> dict:
        return {"error": "config", "message": str(self), "field": self.field, "line": self.line}


@dataclass
class PlantConfig:
    model: str = "integrator"
    A: Optional[List[List[float]]] = None
    B: Optional[List[List[float]]] = None
    C: Optional[List[List[float]]] = None
    hold: str = "zoh"
    hold_coefficients: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0, 1.0])
    tau_min: float = 1.0
    tau_max: float = 60.0
    x0: List[float] = field(default_factory=lambda: [10.0])
    state_weight: float = 1.0
    beta: float = 1e-5
    threshold_weight: Optional[float] = None


@dataclass
class ControllerConfig:
    model: str = "tracking"
    k_p: float = 0.5
    A: Optional[List[List[float]]] = None
    B: Optional[List[List[float]]] = None
    C: Optional[List[List[float]]] = None
    D: Optional[List[List[float]]] = None
    hold: str = "zoh"
    hold_coefficients: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0, 1.0])
    tau_min: float = 2.0
    tau_max: float = 120.0
    x0: Optional[List[float]] = None
    state_weight: float = 0.2
    beta: float = 1e-5
    threshold_weight: Optional[float] = None


@dataclass
class AnalysisConfig:
    rho: float = 1.0
    dwell_tolerance: float = 1e-4
    dwell_offset: float = 1.0
    chi_p: float = 0.5
    chi_c: float = 0.5
    alpha_p: float = 0.0
    alpha_c: float = 0.0
    grid_points: int = 21
    grid: Dict[str, List[float]] = field(default_factory=dict)


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    plant: PlantConfig = field(default_factory=PlantConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    out_dir: Optional[str] = None
    seed: int = 0
    policy: str = "plant-first"

    def validate(self) -> "ScenarioConfig":
        for sec in ("plant", "controller"):
            c = getattr(self, sec)
            if not c.tau_min > 0:
                raise ConfigError(f"{sec}.tau_min must be > 0, got {c.tau_min}", f"{sec}.tau_min")
            if not c.tau_min < c.tau_max:
                raise ConfigError(
                    f"{sec}.tau_min ({c.tau_min}) must be < {sec}.tau_max ({c.tau_max})",
                    f"{sec}.tau_min",
                )
            if c.beta < 0:
                raise ConfigError(f"{sec}.beta must be >= 0", f"{sec}.beta")
        if self.plant.model not in ("integrator", "linear"):
            raise ConfigError(f"unknown plant model {self.plant.model!r}", "plant.model")
        if self.controller.model not in ("tracking", "linear"):
            raise ConfigError(f"unknown controller model {self.controller.model!r}", "controller.model")
        if self.plant.hold not in ("zoh", "model", "linear"):
            raise ConfigError(f"unknown plant hold {self.plant.hold!r}", "plant.hold")
        if self.controller.hold not in ("zoh", "linear"):
            raise ConfigError(f"unknown controller hold {self.controller.hold!r}", "controller.hold")
        if self.policy not in ("plant-first", "controller-first"):
            raise ConfigError(f"unknown policy {self.policy!r}", "scenario.policy")
        try:
            build_system(self)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc), "plant") from exc
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["solver"]["zeno_window"] = list(self.solver.zeno_window)
        return d


# --------------------------------------------------------------------------
# built-in example

EXAMPLES = {
    "fig2": (10.0, 1.0, 2.0),
    "fig34": (0.5, 1.0, 2.0),
    "fig56": (0.5, 0.2, 0.3),
}


def builtin_integrator_scenario(k_p: float, tau_p: float, tau_c: float, **solver_kw) -> ScenarioConfig:
    """Single integrator x_p' = uhat under ZOH sampling, tracked by
    x_c' = xhat_p - x_c with u = -k_p x_c; x_p(0) = x_c(0) = 10.
    """
    return ScenarioConfig(
        name=f"integrator_k{k_p:g}_tp{tau_p:g}_tc{tau_c:g}",
        plant=PlantConfig(tau_min=tau_p, tau_max=60.0, x0=[10.0]),
        controller=ControllerConfig(k_p=k_p, tau_min=tau_c, tau_max=120.0, x0=[10.0]),
        solver=SolverConfig(**solver_kw),
    ).validate()


# --------------------------------------------------------------------------
# model assembly


def _hold(kind: str, coeffs, plant=None):
    if kind == "zoh":
        return zoh_hold()
    if kind == "model":
        return model_based_hold(plant)
    return linear_hold(*[float(c) for c in coeffs])


def _trigger(c, n_x, slack) -> TriggerSpec:
    w = 1.0 + c.beta if c.threshold_weight is None else c.threshold_weight
    return TriggerSpec(
        V=QuadraticStorage(c.state_weight * np.eye(n_x), c.beta),
        W=QuadraticThreshold(w),
        tau_min=c.tau_min,
        tau_max=c.tau_max,
        timer_slack=slack,
    )


def build_system(config: ScenarioConfig) -> Tuple[ETCSystem, np.ndarray]:
    """Closed-loop system and initial state described by `config`."""
    p, c = config.plant, config.controller
    if p.model == "integrator":
        plant = linear_plant([[0.0]], [[1.0]])
    else:
        if p.A is None or p.B is None:
            raise ConfigError("linear plant needs A and B", "plant.A")
        plant = linear_plant(p.A, p.B, p.C)
    if c.model == "tracking":
        n = plant.n_p
        if plant.n_u != n:
            raise ConfigError("tracking controller needs n_u == n_p", "controller.model")
        controller = linear_controller(-np.eye(n), np.eye(n), -c.k_p * np.eye(n), np.zeros((n, n)))
    else:
        if any(M is None for M in (c.A, c.B, c.C, c.D)):
            raise ConfigError("linear controller needs A, B, C and D", "controller.A")
        controller = linear_controller(c.A, c.B, c.C, c.D)
    slack = config.solver.event_tolerance
    system = build_closed_loop(
        plant,
        _hold(p.hold, p.hold_coefficients, plant),
        controller,
        _hold(c.hold, c.hold_coefficients),
        _trigger(p, plant.n_p, slack),
        _trigger(c, controller.n_c, slack),
    )
    x_p0 = np.asarray(p.x0, dtype=float)
    x_c0 = x_p0 if c.x0 is None else np.asarray(c.x0, dtype=float)
    if x_p0.shape != (plant.n_p,):
        raise ConfigError(f"plant.x0 needs {plant.n_p} entries", "plant.x0")
    if x_c0.shape != (controller.n_c,):
        raise ConfigError(f"controller.x0 needs {controller.n_c} entries", "controller.x0")
    return system, system.initial_state(x_p0, x_c0)


# --------------------------------------------------------------------------
# config parsing

_SECTIONS = {
    "plant": PlantConfig,
    "controller": ControllerConfig,
    "solver": SolverConfig,
    "analysis": AnalysisConfig,
}
_SCENARIO_KEYS = {"name": str, "out_dir": str, "seed": int, "policy": str}
_MATRIX_KEYS = {"A", "B", "C", "D"}
_VECTOR_KEYS = {"x0", "hold_coefficients", "zeno_window"}


def _parse_vector(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(v) for v in str(text).replace(",", " ").split()]


def _parse_matrix(text):
    if isinstance(text, (list, tuple)):
        rows = [r if isinstance(r, (list, tuple)) else [r] for r in text]
        return [[float(v) for v in r] for r in rows]
    if isinstance(text, (int, float)):
        return [[float(text)]]
    rows = [r for r in str(text).split(";") if r.strip()]
    out = [_parse_vector(r) for r in rows]
    if len({len(r) for r in out}) > 1:
        raise ValueError("matrix rows have different lengths")
    return out


def _coerce(section: str, key: str, raw, target_type):
    if key in _MATRIX_KEYS:
        return _parse_matrix(raw)
    if key in _VECTOR_KEYS:
        v = _parse_vector(raw)
        return (v[0], int(v[1])) if key == "zeno_window" else v
    if section == "analysis" and key == "grid":
        return {k: _parse_vector(v) for k, v in dict(raw).items()}
    if target_type in (float, "float", "Optional[float]"):
        return float(raw)
    if target_type in (int, "int"):
        return int(float(raw))
    return str(raw)


def _field_types(cls):
    return {f.name: f.type for f in dataclasses.fields(cls)}


def _locate_lines(text: str) -> Dict[Tuple[str, str], int]:
    where, section = {}, None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            where[(section, "")] = n
            continue
        m = re.match(r"([^=:#;]+?)\s*[=:]", s)
        if m and section:
            where[(section, m.group(1).strip())] = n
    return where


def _from_sections(sections: Dict[str, Dict[str, Any]], lines: Dict[Tuple[str, str], int]) -> ScenarioConfig:
    cfg = ScenarioConfig()
    for sec, values in sections.items():
        if sec == "scenario":
            for key, raw in values.items():
                if key not in _SCENARIO_KEYS:
                    raise ConfigError(f"unknown key {key!r} in [scenario]", f"scenario.{key}", lines.get((sec, key)))
                try:
                    setattr(cfg, key, _SCENARIO_KEYS[key](raw))
                except ValueError as exc:
                    raise ConfigError(f"bad value for scenario.{key}: {exc}", f"scenario.{key}", lines.get((sec, key)))
            continue
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]", sec, lines.get((sec, "")))
        types = _field_types(_SECTIONS[sec])
        kwargs = {}
        grid = {}
        for key, raw in values.items():
            if sec == "analysis" and key.startswith("grid_") and key != "grid_points":
                try:
                    grid[key[5:]] = _parse_vector(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {sec}.{key}: {exc}", f"{sec}.{key}", lines.get((sec, key)))
                continue
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", f"{sec}.{key}", lines.get((sec, key)))
            try:
                kwargs[key] = _coerce(sec, key, raw, types[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {sec}.{key}: {exc}", f"{sec}.{key}", lines.get((sec, key)))
        if grid:
            kwargs["grid"] = {**kwargs.get("grid", {}), **grid}
        try:
            setattr(cfg, sec, _SECTIONS[sec](**kwargs))
        except ValueError as exc:
            raise ConfigError(f"[{sec}] {exc}", sec, lines.get((sec, "")))
    try:
        return cfg.validate()
    except ConfigError as exc:
        if exc.line is None and exc.field and "." in exc.field:
            exc.line = lines.get(tuple(exc.field.split(".", 1)))
        raise


def parse_config_text(text: str, fmt: Optional[str] = None) -> ScenarioConfig:
    """Parse INI-style or JSON config text (format sniffed when not given)."""
    fmt = fmt or ("json" if text.lstrip().startswith("{") else "ini")
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", None, exc.lineno) from exc
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object of sections")
        return _from_sections({k.lower(): v for k, v in data.items()}, {})
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("missing section header", None, exc.lineno) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"cannot parse line: {exc.errors[0][1] if exc.errors else ''}", None, line) from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], None, getattr(exc, "lineno", None)) from exc
    sections = {s.lower(): dict(parser[s]) for s in parser.sections()}
    return _from_sections(sections, _locate_lines(text))


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {str(path)!r}: {exc.strerror}", "path") from exc
    fmt = "json" if path.suffix.lower() == ".json" else None
    return parse_config_text(text, fmt)


def config_to_ini(config: ScenarioConfig) -> str:
    d = config.to_dict()

    def fmt(v):
        if isinstance(v, list) and v and isinstance(v[0], list):
            return "; ".join(" ".join(repr(float(x)) for x in row) for row in v)
        if isinstance(v, (list, tuple)):
            return " ".join(repr(x) for x in v)
        return str(v)

    lines = ["[scenario]"]
    for k in _SCENARIO_KEYS:
        if d[k] is not None:
            lines.append(f"{k} = {d[k]}")
    for sec in _SECTIONS:
        lines.append(f"\n[{sec}]")
        for k, v in d[sec].items():
            if v is None:
                continue
            if k == "grid":
                for name, vals in v.items():
                    lines.append(f"grid_{name} = {fmt(vals)}")
                continue
            lines.append(f"{k} = {fmt(v)}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# parameters for sweeps

PARAM_ALIASES = {
    "k_p": "controller.k_p",
    "tau_p": "plant.tau_min",
    "tau_pi": "plant.tau_max",
    "tau_c": "controller.tau_min",
    "tau_kappa": "controller.tau_max",
    "beta_p": "plant.beta",
    "beta_c": "controller.beta",
    "t_end": "solver.t_end",
    "max_step": "solver.max_step",
    "step": "solver.max_step",
}


def set_param(config: ScenarioConfig, name: str, value) -> ScenarioConfig:
    """Copy of `config` with the (dotted or aliased) parameter replaced."""
    path = PARAM_ALIASES.get(name, name)
    if "." not in path:
        raise ConfigError(f"unknown parameter {name!r}", name)
    sec, key = path.split(".", 1)
    cfg = copy.deepcopy(config)
    section = getattr(cfg, sec, None)
    if section is None or not hasattr(section, key):
        raise ConfigError(f"unknown parameter {name!r}", name)
    types = _field_types(type(section))
    try:
        new = dataclasses.replace(section, **{key: _coerce(sec, key, value, types[key])})
    except ValueError as exc:
        raise ConfigError(f"bad value for {path}: {exc}", path) from exc
    setattr(cfg, sec, new)
    return cfg.validate()


# --------------------------------------------------------------------------
# running


@dataclass
class RunOutput:
    config: ScenarioConfig
    arc: HybridArc
    columns: List[str]
    trajectory: np.ndarray
    events: List[Tuple[float, int, str, str]]
    dwell: DwellTimeReport
    storage: StorageReport
    summary: dict
    paths: Dict[str, str] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return self.trajectory[:, self.columns.index(name)]


def _trajectory_table(system: ETCSystem, arc: HybridArc, rho_gain: float):
    t, j, x = arc.stack()
    cols = ["t", "j"] + system.layout.column_names() + ["V_p", "W_p", "V_c", "W_u", "U"]
    extra = np.array([system.storages(q) for q in x]).reshape(len(x), 4)
    U = np.maximum(extra[:, 0], rho_gain * extra[:, 2])
    table = np.column_stack([t, j.astype(float), x, extra, U])
    return cols, table


def _sign_change_times(t: np.ndarray, x: np.ndarray) -> List[float]:
    s = np.sign(x)
    keep = s != 0
    s, tt = s[keep], t[keep]
    return [float(v) for v in tt[1:][s[1:] != s[:-1]]]


def _instants(events) -> Dict[str, List[float]]:
    """Sampling instants per sampler, a simultaneous pair counted once."""
    plant, ctrl = [], []
    k = 0
    while k < len(events):
        t, j, sampler, _ = events[k]
        if sampler == "both":
            plant.append(t)
            ctrl.append(t)
            if k + 1 < len(events) and events[k + 1][2] == "both" and events[k + 1][0] == t:
                k += 1
        elif sampler == "controller":
            ctrl.append(t)
        else:
            plant.append(t)
        k += 1
    return {"plant": plant, "controller": ctrl}


def _gap_stats(ts: List[float]):
    g = np.diff(np.asarray(ts, dtype=float))
    if len(g) == 0:
        return None, None
    return float(g.min()), float(g.mean())


def summarize(columns: Sequence[str], trajectory: np.ndarray, events, status: str) -> dict:
    """Run summary computed only from the trajectory and event tables."""
    col = {c: trajectory[:, i] for i, c in enumerate(columns)}
    t = col["t"]
    x_names = [c for c in columns if c == "x_p" or c.startswith("x_p_")]
    ep_names = [c for c in columns if c == "e_p" or c.startswith("e_p_")]
    eu_names = [c for c in columns if c == "e_u" or c.startswith("e_u_")]
    abs_eu = np.max(np.abs(trajectory[:, [columns.index(c) for c in eu_names]]), axis=1)
    abs_ep = np.max(np.abs(trajectory[:, [columns.index(c) for c in ep_names]]), axis=1)
    abs_xp = np.max(np.abs(trajectory[:, [columns.index(c) for c in x_names]]), axis=1)
    half = 0.5 * (float(t[0]) + float(t[-1]))
    head, tail = abs_eu[t <= half], abs_eu[t >= half]
    head_max = float(head.max()) if len(head) else 0.0
    tail_max = float(tail.max()) if len(tail) else 0.0
    changes = _sign_change_times(t, col[x_names[0]])
    inst = _instants(events)
    p_min, p_mean = _gap_stats(inst["plant"])
    c_min, c_mean = _gap_stats(inst["controller"])
    samplers = [e[2] for e in events]
    return {
        "status": status,
        "t_final": float(t[-1]),
        "j_final": int(col["j"][-1]),
        "samples": int(len(t)),
        "events_total": len(events),
        "events_plant": samplers.count("plant"),
        "events_controller": samplers.count("controller"),
        "events_both": samplers.count("both"),
        "plant_instants": len(inst["plant"]),
        "controller_instants": len(inst["controller"]),
        "plant_min_interval": p_min,
        "plant_mean_interval": p_mean,
        "controller_min_interval": c_min,
        "controller_mean_interval": c_mean,
        "max_abs_x_p": float(abs_xp.max()),
        "max_abs_e_p": float(abs_ep.max()),
        "max_abs_e_u": float(abs_eu.max()),
        "e_u_head_max": head_max,
        "e_u_tail_max": tail_max,
        "e_u_growth": (tail_max / head_max) if head_max > 0 else (0.0 if tail_max == 0 else float("inf")),
        "x_p_sign_changes": len(changes),
        "x_p_sign_change_times": changes,
        "x_p_last_sign_change": changes[-1] if changes else None,
        "final": {c: float(col[c][-1]) for c in columns if c not in ("t", "j")},
    }


def run_scenario(config: ScenarioConfig, out_dir=None, write: bool = True) -> RunOutput:
    """Simulate `config` and, if `write`, emit trajectory/events CSV and summary JSON.

    Engine failures (no progress, Zeno guard, non-finite step) end the run
    early and are reported in ``summary["status"]``.
    """
    system, q0 = build_system(config)
    arc = simulate(system, q0, config.solver, selection_policy=config.policy, strict=False)
    columns, table = _trajectory_table(system, arc, config.analysis.rho)
    events = [(e.t, e.j, e.sampler, e.cause) for e in arc.events]
    dwell = verify_dwell(arc, tolerance=config.analysis.dwell_tolerance, offset=config.analysis.dwell_offset)
    rho = config.analysis.rho
    storage = monitor_storage(arc, system.trigger_p.V, system.trigger_c.V, rho=lambda v: rho * v)
    summary = summarize(columns, table, events, arc.status)
    if arc.message:
        summary["message"] = arc.message
    out = RunOutput(config, arc, columns, table, events, dwell, storage, summary)
    target = out_dir or config.out_dir
    if write and target:
        out.paths = write_outputs(out, target)
    return out


def _fmt(v) -> str:
    return repr(float(v))


def write_outputs(out: RunOutput, out_dir) -> Dict[str, str]:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    traj, evs, summ = d / TRAJECTORY_FILE, d / EVENTS_FILE, d / SUMMARY_FILE
    j_col = out.columns.index("j")
    with open(traj, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(out.columns)
        for row in out.trajectory:
            w.writerow([str(int(v)) if i == j_col else _fmt(v) for i, v in enumerate(row)])
    with open(evs, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "j", "sampler", "cause"])
        for t, j, sampler, cause in out.events:
            w.writerow([_fmt(t), str(j), sampler or "", cause or ""])
    doc = {
        "config": out.config.to_dict(),
        "summary": out.summary,
        "dwell": out.dwell.to_dict(),
        "storage": out.storage.to_dict(),
    }
    summ.write_text(json.dumps(doc, indent=2) + "\n")
    return {"trajectory": str(traj), "events": str(evs), "summary": str(summ)}


def read_trajectory_csv(path) -> Tuple[List[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)


def read_events_csv(path) -> List[Tuple[float, int, str, str]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return [(float(t), int(j), s or None, c or None) for t, j, s, c in r]


def arc_from_tables(columns: Sequence[str], trajectory: np.ndarray, events, meta: Optional[dict] = None) -> HybridArc:
    """Rebuild a `HybridArc` from exported tables (one segment per j value)."""
    j_col = columns.index("j")
    state_cols = [i for i, c in enumerate(columns) if c not in ("t", "j", "V_p", "W_p", "V_c", "W_u", "U")]
    names = [columns[i] for i in state_cols]
    segments = []
    jv = trajectory[:, j_col].astype(int)
    for j in np.unique(jv):
        rows = trajectory[jv == j]
        segments.append(Segment(int(j), rows[:, 0].copy(), rows[:, state_cols].copy()))
    recs = [EventRecord(HybridTime(t, j), s, c) for t, j, s, c in events]
    meta = dict(meta or {})
    n_p = sum(1 for c in names if c == "x_p" or c.startswith("x_p_"))
    n_c = sum(1 for c in names if c == "x_c" or c.startswith("x_c_"))
    n_u = sum(1 for c in names if c == "e_u" or c.startswith("e_u_"))
    meta.setdefault("layout", (n_p, n_c, n_u))
    meta.setdefault("timer_index", (names.index("eta_p"), names.index("eta_c")))
    return HybridArc(segments, recs, meta.pop("status", "t_end"), "", meta)


def _sweep_one(args):
    config, name, value, out_dir = args
    cfg = set_param(config, name, value)
    run = run_scenario(cfg, out_dir=out_dir, write=out_dir is not None)
    return value, run.summary, run.dwell.ok


def run_sweep(config: ScenarioConfig, name: str, values: Sequence, out_dir=None, jobs: int = 1):
    """Run one scenario per value; results are ordered as `values`."""
    tasks = []
    for v in values:
        sub = None if out_dir is None else os.path.join(str(out_dir), f"{name}={v}")
        tasks.append((config, name, v, sub))
    # validate every value before starting any run
    for _, n, v, _ in tasks:
        set_param(config, n, v)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_sweep_one, tasks))
    return [_sweep_one(t) for t in tasks]


# --------------------------------------------------------------------------
# small-gain check from a config


def small_gain_for_config(config: ScenarioConfig):
    """Grid check of the small-gain conditions with linear chi/rho and quadratic alpha."""
    system, q0 = build_system(config)
    a = config.analysis
    axes = []
    for i, name in enumerate(system.layout.column_names()):
        spec = a.grid.get(name)
        if spec is not None:
            lo, hi = spec[0], spec[1]
            n = int(spec[2]) if len(spec) > 2 else a.grid_points
            axes.append((lo, hi, n if lo != hi else 1))
        elif name.startswith(("x_p", "x_c")):
            r = max(1.0, float(np.max(np.abs(q0))))
            axes.append((-r, r, a.grid_points))
        else:
            axes.append((0.0, 0.0, 1))
    grid = GridSpec(axes)
    rho = (lambda r: a.rho * r) if a.rho > 0 else None
    return check_small_gain_system(
        system,
        chi_p=lambda s: a.chi_p * s,
        chi_c=lambda s: a.chi_c * s,
        alpha_p=lambda r: a.alpha_p * r * r,
        alpha_c=lambda r: a.alpha_c * r * r,
        grid=grid,
        rho=rho,
        clarke_kw={"seed": config.seed},
    )

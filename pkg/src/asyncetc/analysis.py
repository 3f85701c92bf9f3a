"""Checks on simulated arcs and on candidate storage functions.

* `verify_dwell`: per-sampler minimum inter-sample times, timer bounds and
  the average dwell-time inequality j - i <= (t - s)/tau_a + N0.
* `monitor_storage`: V_p, V_c and U = max(V_p, rho(V_c)) along an arc, with
  flags for jumps that increase any of them.
* `clarke_estimate`: sampled lower estimate of the Clarke directional
  derivative.
* `check_small_gain`: grid sampling of the five small-gain conditions for
  user-supplied gains chi_p, chi_c, decay rates alpha_p, alpha_c and an
  optional rho.

Sampled checks can only find violations; an empty report is evidence, not
proof.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .hybrid import HybridArc, Successor
from .triggers import LocalState

__all__ = [
    "DwellTimeReport",
    "StorageTrace",
    "StorageReport",
    "SmallGainReport",
    "GridSpec",
    "logical_jumps",
    "verify_dwell",
    "monitor_storage",
    "clarke_estimate",
    "set_distance",
    "check_small_gain",
    "check_small_gain_system",
]


# --------------------------------------------------------------------------
# dwell time


@dataclass
class LogicalJump:
    """A sampling instant: "P" (plant), "C" (controller) or "B" (both)."""

    t: float
    kind: str
    j_before: int
    j_after: int


def logical_jumps(arc: HybridArc) -> List[LogicalJump]:
    """Group event records into sampling instants.

    A simultaneous trigger occupies two consecutive jump indices at the same
    time; it is reported here as a single "B" instant.
    """
    out: List[LogicalJump] = []
    events = arc.events
    k = 0
    while k < len(events):
        ev = events[k]
        if ev.sampler == "both":
            nxt = events[k + 1] if k + 1 < len(events) else None
            if nxt is not None and nxt.sampler == "both" and nxt.t == ev.t and nxt.j == ev.j + 1:
                out.append(LogicalJump(ev.t, "B", ev.j - 1, nxt.j))
                k += 2
                continue
            out.append(LogicalJump(ev.t, "B", ev.j - 1, ev.j))
        else:
            kind = {"plant": "P", "controller": "C"}.get(ev.sampler, "P")
            out.append(LogicalJump(ev.t, kind, ev.j - 1, ev.j))
        k += 1
    return out


@dataclass
class DwellTimeReport:
    tau_p: float
    tau_c: float
    tau_a: float
    tolerance: float
    offset: float
    plant_jumps: int
    controller_jumps: int
    simultaneous_jumps: int
    min_plant_gap: Optional[float]
    min_controller_gap: Optional[float]
    max_eta_p: Optional[float]
    max_eta_c: Optional[float]
    gamma_r_slope: float
    N_r: float
    violations: List[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def violations_of(self, check: str) -> List[dict]:
        return [v for v in self.violations if v["check"] == check]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d


def _gap_violations(times: Sequence[float], idx: Sequence[int], bound: float, tol: float, check: str):
    gaps = np.diff(np.asarray(times, dtype=float))
    out = []
    for k in np.nonzero(gaps < bound - tol)[0]:
        out.append(
            {
                "check": check,
                "events": [int(idx[k]), int(idx[k + 1])],
                "times": [float(times[k]), float(times[k + 1])],
                "observed": float(gaps[k]),
                "required": float(bound),
            }
        )
    return out, (float(gaps.min()) if len(gaps) else None)


def verify_dwell(
    arc: HybridArc,
    tau_p: Optional[float] = None,
    tau_c: Optional[float] = None,
    tau_pi: Optional[float] = None,
    tau_kappa: Optional[float] = None,
    tolerance: float = 1e-6,
    offset: float = 1.0,
    timer_index: Optional[Tuple[int, int]] = None,
) -> DwellTimeReport:
    """Dwell-time checks on a complete arc.

    (a) consecutive plant samples (P or B) at least tau_p - tolerance apart;
    (b) consecutive controller samples (C or B) at least tau_c - tolerance
        apart;
    (c) j - i <= (t - s + tolerance)/tau_a + offset for every pair of hybrid
        times (s, i) <= (t, j), tau_a = min(tau_p, tau_c)/2, counting
        sampling instants;
    (d) timers at most tau_pi + tolerance and tau_kappa + tolerance.

    Missing tau values and timer positions are read from ``arc.meta``.
    """
    meta = arc.meta
    tau_p = meta["tau_p"] if tau_p is None else tau_p
    tau_c = meta["tau_c"] if tau_c is None else tau_c
    tau_pi = meta.get("tau_pi") if tau_pi is None else tau_pi
    tau_kappa = meta.get("tau_kappa") if tau_kappa is None else tau_kappa
    timer_index = meta.get("timer_index") if timer_index is None else timer_index
    tau_a = min(tau_p, tau_c) / 2.0

    jumps = logical_jumps(arc)
    violations: List[dict] = []

    plant_k = [k for k, J in enumerate(jumps) if J.kind in ("P", "B")]
    ctrl_k = [k for k, J in enumerate(jumps) if J.kind in ("C", "B")]
    v, min_p = _gap_violations([jumps[k].t for k in plant_k], plant_k, tau_p, tolerance, "plant_gap")
    violations += v
    v, min_c = _gap_violations([jumps[k].t for k in ctrl_k], ctrl_k, tau_c, tolerance, "controller_gap")
    violations += v

    # Worst pair for (c): (s, i) just before instant a, (t, j) just after b,
    # so j - i = b - a + 1.  With g_k = k - T_k/tau_a the condition reads
    # g_b - g_a <= offset - 1 + tolerance/tau_a for all b >= a.
    if jumps:
        T = np.array([J.t for J in jumps])
        g = np.arange(len(T)) - T / tau_a
        suffix_arg = np.empty(len(g), dtype=int)
        best = len(g) - 1
        for k in range(len(g) - 1, -1, -1):
            if g[k] >= g[best]:
                best = k
            suffix_arg[k] = best
        limit = offset - 1.0 + tolerance / tau_a
        for a in range(len(g)):
            b = suffix_arg[a]
            if g[b] - g[a] > limit + 1e-12:
                violations.append(
                    {
                        "check": "average_dwell",
                        "events": [int(a), int(b)],
                        "times": [float(T[a]), float(T[b])],
                        "observed": float(b - a + 1),
                        "required": float((T[b] - T[a] + tolerance) / tau_a + offset),
                    }
                )

    max_eta_p = max_eta_c = None
    if timer_index is not None:
        t_all, j_all, x_all = arc.stack()
        for name, col, cap in (("timer_p", timer_index[0], tau_pi), ("timer_c", timer_index[1], tau_kappa)):
            eta = x_all[:, col]
            peak = float(eta.max())
            if name == "timer_p":
                max_eta_p = peak
            else:
                max_eta_c = peak
            if cap is not None and peak > cap + tolerance:
                k = int(np.argmax(eta))
                violations.append(
                    {
                        "check": name,
                        "events": [int(j_all[k])],
                        "times": [float(t_all[k])],
                        "observed": peak,
                        "required": float(cap),
                    }
                )

    n_r = 1.0 / (1.0 + 1.0 / tau_a)
    return DwellTimeReport(
        tau_p=tau_p,
        tau_c=tau_c,
        tau_a=tau_a,
        tolerance=tolerance,
        offset=offset,
        plant_jumps=sum(J.kind == "P" for J in jumps),
        controller_jumps=sum(J.kind == "C" for J in jumps),
        simultaneous_jumps=sum(J.kind == "B" for J in jumps),
        min_plant_gap=min_p,
        min_controller_gap=min_c,
        max_eta_p=max_eta_p,
        max_eta_c=max_eta_c,
        gamma_r_slope=n_r,
        N_r=n_r,
        violations=violations,
    )


# --------------------------------------------------------------------------
# storage monitoring


@dataclass
class StorageTrace:
    t: np.ndarray
    j: np.ndarray
    V_p: np.ndarray
    V_c: np.ndarray
    U: np.ndarray


@dataclass
class StorageReport:
    trace: StorageTrace
    jump_flags: List[dict]
    tail_growth: float
    non_convergent: bool

    def to_dict(self) -> dict:
        return {
            "jump_flags": self.jump_flags,
            "tail_growth": self.tail_growth,
            "non_convergent": self.non_convergent,
            "U_initial": float(self.trace.U[0]),
            "U_final": float(self.trace.U[-1]),
            "U_max": float(self.trace.U.max()),
        }


def _identity(r):
    return r


def monitor_storage(arc: HybridArc, V_p, V_c, rho=None, layout=None, tolerance: float = 1e-12) -> StorageReport:
    """Evaluate V_p, V_c and U = max(V_p, rho(V_c)) along the arc.

    `V_p` and `V_c` take (x, e, eta).  Every jump where one of the three
    increased by more than `tolerance` is flagged.  The run is marked
    non-convergent when max U over the second half of the horizon is at least
    max U over the first half.
    """
    from .system import StateLayout

    rho = rho or _identity
    if layout is None:
        layout = StateLayout(*arc.meta["layout"])

    def values(q):
        p, c = layout.local_states(q)
        vp, vc = float(V_p(*p)), float(V_c(*c))
        return vp, vc, max(vp, float(rho(vc)))

    t, j, x = arc.stack()
    vals = np.array([values(q) for q in x])
    trace = StorageTrace(t, j, vals[:, 0], vals[:, 1], vals[:, 2])

    flags = []
    for seg_after, (pre, post) in zip(arc.segments[1:], arc.jump_pairs()):
        before, after = values(pre), values(post)
        for name, b, a in zip(("V_p", "V_c", "U"), before, after):
            if a > b + tolerance:
                flags.append(
                    {"quantity": name, "t": seg_after.t_start, "j": seg_after.j, "before": b, "after": a}
                )

    half = 0.5 * (t[0] + t[-1])
    head = trace.U[t <= half]
    tail = trace.U[t >= half]
    head_max = float(head.max()) if len(head) else float(trace.U[0])
    tail_max = float(tail.max()) if len(tail) else float(trace.U[-1])
    if head_max > 0:
        growth = tail_max / head_max
    else:
        growth = 0.0 if tail_max == 0 else float("inf")
    return StorageReport(trace, flags, growth, bool(tail_max >= head_max and tail_max > 0))


# --------------------------------------------------------------------------
# Clarke directional derivative


def clarke_estimate(
    f: Callable[[np.ndarray], float],
    x,
    v,
    h_grid: Optional[Sequence[float]] = None,
    y_radius: float = 1e-4,
    n_samples: int = 32,
    seed: int = 0,
) -> float:
    """max over y near x and h in h_grid of (f(y + h v) - f(y))/h.

    This samples the limsup defining the Clarke derivative from below; it
    is exact only in the limit of dense sampling.  y = x is always included,
    the other points are drawn uniformly from the ball of radius `y_radius`.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not np.any(v):
        return 0.0
    hs = np.geomspace(1e-4, 1e-6, 5) if h_grid is None else np.asarray(h_grid, dtype=float)
    rng = np.random.default_rng(seed)
    n = x.size
    dirs = rng.normal(size=(n_samples, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = y_radius * rng.random(n_samples) ** (1.0 / n)
    ys = np.vstack([x, x + dirs * radii[:, None]])
    best = -np.inf
    for y in ys:
        fy = float(f(y))
        for h in hs:
            val = (float(f(y + h * v)) - fy) / h
            if not np.isfinite(val):
                raise FloatingPointError(f"non-finite difference quotient at y={y!r}, h={h}")
            best = max(best, val)
    return best


# --------------------------------------------------------------------------
# small gain


def set_distance(point, lower, upper) -> float:
    """Euclidean distance from `point` to the box [lower, upper]."""
    p = np.asarray(point, dtype=float)
    lo = np.broadcast_to(np.asarray(lower, dtype=float), p.shape)
    hi = np.broadcast_to(np.asarray(upper, dtype=float), p.shape)
    return float(np.linalg.norm(p - np.clip(p, lo, hi)))


@dataclass
class GridSpec:
    """Per-component (low, high, count) ranges; count 1 fixes the component."""

    ranges: Sequence[Tuple[float, float, int]]

    @classmethod
    def uniform(cls, lows, highs, n: int = 21) -> "GridSpec":
        return cls([(float(a), float(b), n if a != b else 1) for a, b in zip(lows, highs)])

    def axes(self) -> List[np.ndarray]:
        return [np.linspace(a, b, int(n)) if n > 1 else np.array([a]) for a, b, n in self.ranges]

    def points(self):
        for idx, p in enumerate(itertools.product(*self.axes())):
            yield idx, np.array(p, dtype=float)

    @property
    def size(self) -> int:
        return int(np.prod([max(1, int(n)) for _, _, n in self.ranges]))


@dataclass
class SmallGainReport:
    violations: Dict[str, List[dict]]
    checked: Dict[str, int]
    coverage: dict

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checked": self.checked,
            "violation_counts": {k: len(v) for k, v in self.violations.items()},
            "violations": self.violations,
            "coverage": self.coverage,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def violations_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["item", "grid_index", "point", "measured", "bound"])
        for item, rows in self.violations.items():
            for r in rows:
                w.writerow([item, r.get("grid_index", ""), " ".join(repr(float(c)) for c in r["point"]),
                            repr(r["measured"]), repr(r["bound"])])
        return buf.getvalue()


def _violation(idx, point, measured, bound):
    return {"grid_index": idx, "point": [float(c) for c in np.atleast_1d(point)],
            "measured": float(measured), "bound": float(bound)}


def check_small_gain(
    V_p: Callable[[np.ndarray], float],
    V_c: Callable[[np.ndarray], float],
    chi_p: Callable[[float], float],
    chi_c: Callable[[float], float],
    alpha_p: Callable[[float], float],
    alpha_c: Callable[[float], float],
    flow_map: Callable[[np.ndarray], np.ndarray],
    grid: GridSpec,
    *,
    split: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]],
    dist_p: Callable[[np.ndarray], float],
    dist_c: Callable[[np.ndarray], float],
    sandwich: Optional[Tuple[Callable, Callable, Callable, Callable]] = None,
    rho: Optional[Callable[[float], float]] = None,
    jump_map: Optional[Callable[[np.ndarray], Sequence]] = None,
    in_flow_set: Optional[Callable[[np.ndarray], bool]] = None,
    in_jump_set: Optional[Callable[[np.ndarray], bool]] = None,
    s_grid: Optional[Sequence[float]] = None,
    clarke_kw: Optional[dict] = None,
    tolerance: float = 1e-9,
) -> SmallGainReport:
    """Sample the small-gain conditions on a grid of closed-loop states.

    item1  a_lo(|q|_A) <= V(q) <= a_hi(|q|_A) for both subsystems (needs
           `sandwich` = (a_lo_p, a_hi_p, a_lo_c, a_hi_c), skipped otherwise)
    item2  on C: V_p >= chi_p(V_c) implies V_p°(q_p; F1) <= -alpha_p(|q_p|_A),
           and dually for the controller
    item3  on D: V_p and V_c do not increase under any jump successor
    item4  chi_p(chi_c(s)) < s on `s_grid`
    item5  chi_p(r) < rho(r), chi_c(rho(r)) < r, rho'(r) > 0 on `s_grid`
           (skipped without `rho`)

    `V_p`, `V_c` act on the plant/controller parts returned by `split`.
    """
    s_vals = np.geomspace(1e-3, 1e3, 61) if s_grid is None else np.asarray(s_grid, dtype=float)
    ckw = {"y_radius": 1e-6, "h_grid": np.geomspace(1e-4, 1e-7, 4), "n_samples": 8}
    ckw.update(clarke_kw or {})
    viol = {f"item{i}": [] for i in range(1, 6)}
    checked = {f"item{i}": 0 for i in range(1, 6)}

    for idx, q in grid.points():
        qp, qc = split(q)
        vp, vc = float(V_p(qp)), float(V_c(qc))
        dp, dc = dist_p(qp), dist_c(qc)

        if sandwich is not None:
            lo_p, hi_p, lo_c, hi_c = sandwich
            checked["item1"] += 1
            for v, d, lo, hi in ((vp, dp, lo_p, hi_p), (vc, dc, lo_c, hi_c)):
                if v < lo(d) - tolerance:
                    viol["item1"].append(_violation(idx, q, v, lo(d)))
                elif v > hi(d) + tolerance:
                    viol["item1"].append(_violation(idx, q, v, hi(d)))

        if in_flow_set is None or in_flow_set(q):
            dq = np.asarray(flow_map(q), dtype=float)
            fp, fc = split(dq)
            checked["item2"] += 1
            if vp >= chi_p(vc):
                rate = clarke_estimate(V_p, qp, fp, **ckw)
                bound = -alpha_p(dp)
                if rate > bound + tolerance:
                    viol["item2"].append(dict(_violation(idx, q, rate, bound), side="plant"))
            if vc >= chi_c(vp):
                rate = clarke_estimate(V_c, qc, fc, **ckw)
                bound = -alpha_c(dc)
                if rate > bound + tolerance:
                    viol["item2"].append(dict(_violation(idx, q, rate, bound), side="controller"))

        if jump_map is not None and (in_jump_set is None or in_jump_set(q)):
            checked["item3"] += 1
            for succ in jump_map(q):
                state = succ.state if isinstance(succ, Successor) else succ
                sp, sc = split(np.asarray(state, dtype=float))
                ap, ac = float(V_p(sp)), float(V_c(sc))
                if ap > vp + tolerance:
                    viol["item3"].append(dict(_violation(idx, q, ap, vp), side="plant"))
                if ac > vc + tolerance:
                    viol["item3"].append(dict(_violation(idx, q, ac, vc), side="controller"))

    for s in s_vals:
        checked["item4"] += 1
        comp = chi_p(chi_c(s))
        if not comp < s:
            viol["item4"].append({"point": [float(s)], "measured": float(comp), "bound": float(s)})

    if rho is not None:
        for r in s_vals:
            checked["item5"] += 1
            h = 1e-6 * max(1.0, r)
            slope = (rho(r + h) - rho(r - h)) / (2 * h)
            lo, val = chi_p(r), rho(r)
            if not lo < val:
                viol["item5"].append({"point": [float(r)], "measured": float(val), "bound": float(lo), "kind": "lower"})
            if not chi_c(val) < r:
                viol["item5"].append({"point": [float(r)], "measured": float(chi_c(val)), "bound": float(r), "kind": "upper"})
            if not slope > 0:
                viol["item5"].append({"point": [float(r)], "measured": float(slope), "bound": 0.0, "kind": "slope"})

    coverage = {
        "ranges": [list(map(float, r[:2])) + [int(r[2])] for r in grid.ranges],
        "grid_points": grid.size,
        "s_grid": [float(s_vals.min()), float(s_vals.max()), int(len(s_vals))],
    }
    return SmallGainReport(viol, checked, coverage)


def check_small_gain_system(system, chi_p, chi_c, alpha_p, alpha_c, grid: GridSpec, **kw) -> SmallGainReport:
    """`check_small_gain` wired to a closed-loop `ETCSystem`.

    Distances are to A_p = {x_p = 0, e_p = 0, eta_p in [0, tau_pi]} and
    A_c = {x_c = 0, e_u = 0, eta_c in [0, tau_kappa]}.
    """
    L = system.layout
    tp, tc = system.trigger_p, system.trigger_c
    n_xp, n_xc = L.n_p, L.n_c

    def split(q):
        return q[L.plant_slice], q[L.controller_slice]

    def V_p(qp):
        return tp.V(qp[:n_xp], qp[n_xp:-1], qp[-1])

    def V_c(qc):
        return tc.V(qc[:n_xc], qc[n_xc:-1], qc[-1])

    def box_dist(q_loc, tau_max):
        lo = np.zeros(q_loc.shape)
        hi = np.zeros(q_loc.shape)
        hi[-1] = tau_max
        return set_distance(q_loc, lo, hi)

    kw.setdefault("jump_map", system.jump_map)
    kw.setdefault("in_flow_set", system.in_flow_set)
    kw.setdefault("in_jump_set", system.in_jump_set)
    return check_small_gain(
        V_p, V_c, chi_p, chi_c, alpha_p, alpha_c, system.flow_map, grid,
        split=split,
        dist_p=lambda qp: box_dist(qp, tp.tau_max),
        dist_c=lambda qc: box_dist(qc, tc.tau_max),
        **kw,
    )

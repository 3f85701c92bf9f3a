"""Generic solution engine for hybrid systems of the form

    q' = F(q),  q in C
    q+ in G(q), q in D

Flows are integrated with fixed-step RK4.  Entry into the jump set is
localized by bisection on the boolean membership predicate, so guards can be
arbitrary conjunctions/disjunctions of inequalities rather than one smooth
residual.  Solutions are stored on a hybrid time domain: one `Segment` per
jump index, with contiguous time intervals.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "HybridTime",
    "EventRecord",
    "Successor",
    "Segment",
    "HybridArc",
    "HybridSystemDef",
    "SolverConfig",
    "SimulationError",
    "NoProgress",
    "ZenoGuard",
    "StepFailure",
    "flow_step",
    "locate_event",
    "jump_step",
    "simulate",
]

FlowMap = Callable[[np.ndarray], np.ndarray]
Predicate = Callable[[np.ndarray], bool]

SAMPLERS = ("plant", "controller", "both")
CAUSES = ("threshold", "timeout", "forced-simultaneous")


class HybridTime(NamedTuple):
    """A point (t, j) of a hybrid time domain."""

    t: float
    j: int

    def precedes(self, other: "HybridTime") -> bool:
        return self.t <= other.t and self.j <= other.j


@dataclass(frozen=True)
class EventRecord:
    """One sampler firing.

    `hybrid_time` is the time *after* the jump, so `j` is the index of the
    segment the jump leads into.
    """

    hybrid_time: HybridTime
    sampler: Optional[str] = None
    cause: Optional[str] = None

    @property
    def t(self) -> float:
        return self.hybrid_time.t

    @property
    def j(self) -> int:
        return self.hybrid_time.j


class Successor(NamedTuple):
    """An element of the set returned by a jump map, with event labels."""

    state: np.ndarray
    sampler: Optional[str] = None
    cause: Optional[str] = None


@dataclass
class Segment:
    """Flow of the solution on [t_start, t_end] at constant jump index j."""

    j: int
    times: np.ndarray
    states: np.ndarray

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def interval(self) -> Tuple[float, float]:
        return self.t_start, self.t_end


@dataclass
class HybridArc:
    """A solution recorded on its hybrid time domain."""

    segments: List[Segment]
    events: List[EventRecord]
    status: str = "t_end"
    message: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.segments[0].states.shape[1]

    @property
    def n_jumps(self) -> int:
        return self.segments[-1].j - self.segments[0].j

    @property
    def final_time(self) -> HybridTime:
        seg = self.segments[-1]
        return HybridTime(seg.t_end, seg.j)

    @property
    def final_state(self) -> np.ndarray:
        return self.segments[-1].states[-1].copy()

    def stack(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (t, j, states) flattened over all segments."""
        t = np.concatenate([s.times for s in self.segments])
        j = np.concatenate([np.full(len(s.times), s.j, dtype=int) for s in self.segments])
        x = np.vstack([s.states for s in self.segments])
        return t, j, x

    def jump_pairs(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """(pre-jump state, post-jump state) for every jump, in order."""
        return [
            (a.states[-1], b.states[0])
            for a, b in zip(self.segments[:-1], self.segments[1:])
        ]

    def is_contiguous(self) -> bool:
        for a, b in zip(self.segments[:-1], self.segments[1:]):
            if b.j != a.j + 1 or b.t_start != a.t_end:
                return False
        return all(np.all(np.diff(s.times) >= 0.0) for s in self.segments)


@dataclass
class HybridSystemDef:
    """Data (C, F, D, G) of a hybrid system on R^dim.

    `jump_map` returns a sequence of `Successor`.  A single element is an
    ordinary jump; two elements mean two subsystems fired at once and the
    engine applies them as successive jumps (see `jump_step`).
    """

    flow_map: FlowMap
    jump_map: Callable[[np.ndarray], Sequence[Successor]]
    in_flow_set: Predicate
    in_jump_set: Predicate
    dim: int
    meta: dict = field(default_factory=dict)


@dataclass
class SolverConfig:
    max_step: float = 1e-2
    event_tolerance: float = 1e-6
    t_end: float = 60.0
    j_max: int = 100_000
    zeno_window: Tuple[float, int] = (1.0, 1000)
    record_stride: float = 0.0

    def __post_init__(self):
        if not self.max_step > 0:
            raise ValueError(f"max_step must be > 0, got {self.max_step}")
        if not 0 < self.event_tolerance < self.max_step:
            raise ValueError(
                f"event_tolerance must lie in (0, max_step), got {self.event_tolerance}"
            )
        if not self.t_end > 0:
            raise ValueError(f"t_end must be > 0, got {self.t_end}")
        if not self.j_max > 0:
            raise ValueError(f"j_max must be > 0, got {self.j_max}")
        window, count = self.zeno_window
        if not (window > 0 and count > 0):
            raise ValueError(f"zeno_window must be (seconds > 0, jumps > 0), got {self.zeno_window}")
        self.zeno_window = (float(window), int(count))


class SimulationError(RuntimeError):
    """Base class; `arc` holds the solution computed up to the failure."""

    status = "error"

    def __init__(self, message: str, arc: Optional[HybridArc] = None):
        super().__init__(message)
        self.arc = arc


class NoProgress(SimulationError):
    """State is in neither C nor D, so the solution cannot be continued."""

    status = "no_progress"


class ZenoGuard(SimulationError):
    """More jumps than allowed inside one `zeno_window`."""

    status = "zeno"


class StepFailure(SimulationError):
    """Non-finite derivative during integration."""

    status = "step_failure"


def _checked(flow_map: FlowMap, q: np.ndarray) -> np.ndarray:
    dq = np.asarray(flow_map(q), dtype=float)
    if not np.all(np.isfinite(dq)):
        raise StepFailure(f"non-finite derivative at state {q!r}")
    return dq


def flow_step(flow_map: FlowMap, state: np.ndarray, dt: float) -> np.ndarray:
    """One classical RK4 step of size dt."""
    k1 = _checked(flow_map, state)
    k2 = _checked(flow_map, state + 0.5 * dt * k1)
    k3 = _checked(flow_map, state + 0.5 * dt * k2)
    k4 = _checked(flow_map, state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def locate_event(
    flow_map: FlowMap,
    jump_set_membership: Predicate,
    state_before: np.ndarray,
    dt: float,
    tolerance: float = 1e-6,
) -> Tuple[float, np.ndarray]:
    """Bisect for the first offset in (0, dt] at which the flowed state enters D.

    Returns (delta, state_at_event) with the state flowed by `delta` inside the
    jump set and the state flowed by `delta - tolerance` outside it.  Each
    trial point is a single RK4 step from `state_before`.
    """
    lo, hi = 0.0, dt
    at_hi = flow_step(flow_map, state_before, hi)
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        trial = flow_step(flow_map, state_before, mid)
        if jump_set_membership(trial):
            hi, at_hi = mid, trial
        else:
            lo = mid
    return hi, at_hi


Policy = Union[str, Callable[[Sequence[Successor]], int]]


def _select(successors: Sequence[Successor], policy: Policy) -> int:
    if callable(policy):
        return int(policy(successors))
    if policy == "plant-first":
        wanted = "plant"
    elif policy == "controller-first":
        wanted = "controller"
    else:
        raise ValueError(f"unknown selection policy {policy!r}")
    for i, s in enumerate(successors):
        if s.sampler == wanted:
            return i
    return 0


def jump_step(
    system: HybridSystemDef,
    state: np.ndarray,
    time: HybridTime = HybridTime(0.0, 0),
    selection_policy: Policy = "plant-first",
) -> Tuple[List[np.ndarray], List[EventRecord]]:
    """Apply the jump map at `state`.

    Returns the list of post-jump states (one per consumed jump index) and the
    matching event records.  When the jump map offers two successors the
    policy picks which one is applied first; the state is then still in D
    through the other subsystem, and its jump is applied as the second,
    successive jump at the same instant.
    """
    successors = list(system.jump_map(state))
    if not successors:
        raise NoProgress(f"jump map returned no successor at {state!r}")
    if len(successors) == 1:
        succ = successors[0]
        q = np.asarray(succ.state, dtype=float)
        rec = EventRecord(HybridTime(time.t, time.j + 1), succ.sampler, succ.cause)
        return [q], [rec]

    first = successors[_select(successors, selection_policy)]
    q1 = np.asarray(first.state, dtype=float)
    states, records = [q1], [
        EventRecord(HybridTime(time.t, time.j + 1), "both", "forced-simultaneous")
    ]
    if system.in_jump_set(q1):
        follow = list(system.jump_map(q1))
        second = follow[_select(follow, selection_policy)] if len(follow) > 1 else follow[0]
        states.append(np.asarray(second.state, dtype=float))
        records.append(
            EventRecord(HybridTime(time.t, time.j + 2), "both", "forced-simultaneous")
        )
    return states, records


class _Recorder:
    def __init__(self, stride: float):
        self.stride = stride
        self.segments: List[Segment] = []
        self._t: List[float] = []
        self._x: List[np.ndarray] = []
        self._j = 0
        self._last = -np.inf

    def open(self, j: int, t: float, q: np.ndarray):
        self._j = j
        self._t = [t]
        self._x = [q.copy()]
        self._last = t

    def add(self, t: float, q: np.ndarray, force: bool = False):
        if force or self.stride <= 0 or t - self._last >= self.stride:
            self._t.append(t)
            self._x.append(q.copy())
            self._last = t

    def close(self, t: float, q: np.ndarray):
        if self._t[-1] != t:
            self._t.append(t)
            self._x.append(q.copy())
        self.segments.append(Segment(self._j, np.array(self._t), np.vstack(self._x)))


def simulate(
    system: HybridSystemDef,
    q0,
    config: Optional[SolverConfig] = None,
    selection_policy: Policy = "plant-first",
    strict: bool = True,
) -> HybridArc:
    """Compute one solution from q0 until t_end, j_max, or a failure.

    With ``strict=True`` failures raise a `SimulationError` subclass carrying
    the partial arc; otherwise the partial arc is returned with its `status`
    set ("no_progress", "zeno", "step_failure").
    """
    cfg = config or SolverConfig()
    q = np.array(q0, dtype=float)
    if q.shape != (system.dim,):
        raise ValueError(f"q0 must have shape ({system.dim},), got {q.shape}")
    t, j = 0.0, 0
    rec = _Recorder(cfg.record_stride)
    rec.open(j, t, q)
    events: List[EventRecord] = []
    window, max_jumps = cfg.zeno_window
    recent: deque = deque()
    t_eps = 1e-12 * max(1.0, cfg.t_end)

    def finish(status: str, message: str = "") -> HybridArc:
        rec.close(t, q)
        return HybridArc(rec.segments, events, status, message, dict(system.meta))

    try:
        while True:
            if system.in_jump_set(q):
                if j >= cfg.j_max:
                    return finish("j_max")
                states, records = jump_step(system, q, HybridTime(t, j), selection_policy)
                for q_next, r in zip(states, records):
                    rec.close(t, q)
                    q, j = q_next, r.j
                    rec.open(j, t, q)
                    events.append(r)
                    recent.append(t)
                while recent and recent[0] < t - window:
                    recent.popleft()
                if len(recent) > max_jumps:
                    raise ZenoGuard(
                        f"{len(recent)} jumps within {window} s ending at t={t:.6g}"
                    )
                continue

            if not system.in_flow_set(q):
                raise NoProgress(f"state outside C and D at t={t:.6g}, j={j}: {q!r}")
            if cfg.t_end - t <= t_eps:
                return finish("t_end")

            dt = min(cfg.max_step, cfg.t_end - t)
            q_new = flow_step(system.flow_map, q, dt)
            if system.in_jump_set(q_new):
                dt, q_new = locate_event(
                    system.flow_map, system.in_jump_set, q, dt, cfg.event_tolerance
                )
                t, q = t + dt, q_new
                rec.add(t, q, force=True)
                continue
            if not system.in_flow_set(q_new):
                dt, q_new = locate_event(
                    system.flow_map,
                    lambda s: not system.in_flow_set(s),
                    q,
                    dt,
                    cfg.event_tolerance,
                )
                t, q = t + dt, q_new
                rec.add(t, q, force=True)
                if not system.in_jump_set(q):
                    raise NoProgress(
                        f"flow left C without reaching D at t={t:.6g}, j={j}: {q!r}"
                    )
                continue
            t, q = t + dt, q_new
            rec.add(t, q)
    except SimulationError as exc:
        arc = finish(exc.status, str(exc))
        if strict:
            exc.arc = arc
            raise
        return arc

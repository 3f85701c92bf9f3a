"""The four ETC subsystems and their closed-loop hybrid system.

Closed-loop state layout (a flat vector):

    q = [x_p (n_p), e_p (n_p), eta_p, x_c (n_c), e_u (n_u), eta_c]

with e_p = xhat_p - x_p the plant sampling error and e_u = uhat - u the
controller sampling error.  Flows use the substitutions x_m = g_p(x_p),
xhat_p = x_p + e_p and uhat = g_c(x_c, xhat_p) + e_u.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .hybrid import HybridSystemDef, Successor
from .triggers import LocalState, TriggerSpec, flow_allowed, trigger_fired

__all__ = [
    "DimensionMismatch",
    "PlantModel",
    "SamplerModel",
    "ControllerModel",
    "StateLayout",
    "ClosedLoopState",
    "zoh_hold",
    "model_based_hold",
    "linear_hold",
    "linear_plant",
    "linear_controller",
    "closed_loop_flow",
    "closed_loop_jump",
    "build_closed_loop",
    "ETCSystem",
]

FD_REL_STEP = 1e-6


class DimensionMismatch(ValueError):
    pass


@dataclass
class PlantModel:
    """x_p' = f_p(x_p, uhat), x_m = g_p(x_p)."""

    f_p: Callable[[np.ndarray, np.ndarray], np.ndarray]
    g_p: Callable[[np.ndarray], np.ndarray]
    n_p: int
    n_m: int
    n_u: int

    def __post_init__(self):
        if self.n_m > self.n_p:
            raise DimensionMismatch(f"n_m={self.n_m} exceeds n_p={self.n_p}")


@dataclass
class SamplerModel:
    """Hold dynamics: held' = flow(held, signal, aux), held+ = jump(held, signal).

    `aux` is an extra input channel (uhat for the plant sampler) that only
    model-based holds use.
    """

    flow: Callable[..., np.ndarray]
    jump: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "custom"


@dataclass
class ControllerModel:
    """x_c' = f_c(x_c, xhat_p), u = g_c(x_c, xhat_p).

    The Jacobians of g_c (2-D arrays) are used for d g_c/dt; when either is missing a
    central finite difference along the motion direction is used instead.
    """

    f_c: Callable[[np.ndarray, np.ndarray], np.ndarray]
    g_c: Callable[[np.ndarray, np.ndarray], np.ndarray]
    n_c: int
    n_u: int
    dg_dxc: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    dg_dxhat: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def output_rate(self, x_c, xhat, xc_dot, xhat_dot) -> np.ndarray:
        """Time derivative of u = g_c(x_c, xhat_p) along (xc_dot, xhat_dot)."""
        if self.dg_dxc is not None and self.dg_dxhat is not None:
            return self.dg_dxc(x_c, xhat) @ xc_dot + self.dg_dxhat(x_c, xhat) @ xhat_dot
        return self.output_rate_fd(x_c, xhat, xc_dot, xhat_dot)

    def output_rate_fd(self, x_c, xhat, xc_dot, xhat_dot) -> np.ndarray:
        z = np.concatenate([x_c, xhat])
        v = np.concatenate([xc_dot, xhat_dot])
        vn = np.linalg.norm(v)
        if vn == 0.0:
            return np.zeros(self.n_u)
        h = FD_REL_STEP * max(1.0, np.linalg.norm(z)) / vn
        up = np.asarray(self.g_c(x_c + h * xc_dot, xhat + h * xhat_dot), dtype=float)
        dn = np.asarray(self.g_c(x_c - h * xc_dot, xhat - h * xhat_dot), dtype=float)
        return (up - dn) / (2.0 * h)


def zoh_hold() -> SamplerModel:
    """Zero-order hold: held value frozen between samples, copied at samples."""
    return SamplerModel(
        flow=lambda held, signal, aux=None: np.zeros(held.shape),
        jump=lambda held, signal: np.array(signal, dtype=float),
        name="zoh",
    )


def model_based_hold(plant: PlantModel) -> SamplerModel:
    """Plant-sampler hold predicting with the plant model: xhat' = f_p(xhat, uhat).

    Assumes full-state measurement (x_m = x_p) at samples.
    """
    return SamplerModel(
        flow=lambda held, signal, aux: np.asarray(plant.f_p(held, aux), dtype=float),
        jump=lambda held, signal: np.array(signal, dtype=float),
        name="model",
    )


def linear_hold(flow_held=0.0, flow_signal=0.0, jump_held=0.0, jump_signal=1.0) -> SamplerModel:
    """held' = a*held + b*signal, held+ = c*held + d*signal (scalar coefficients)."""
    return SamplerModel(
        flow=lambda held, signal, aux=None: flow_held * held + flow_signal * signal,
        jump=lambda held, signal: jump_held * held + jump_signal * np.asarray(signal, dtype=float),
        name="linear",
    )


def linear_plant(A, B, C=None) -> PlantModel:
    """x_p' = A x_p + B uhat, x_m = C x_p (C defaults to identity)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n_p = A.shape[0]
    C = np.eye(n_p) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
    if A.shape != (n_p, n_p) or B.shape[0] != n_p or C.shape[1] != n_p:
        raise DimensionMismatch(f"inconsistent plant matrices A{A.shape} B{B.shape} C{C.shape}")
    return PlantModel(
        f_p=lambda x, u: A @ x + B @ u,
        g_p=lambda x: C @ x,
        n_p=n_p,
        n_m=C.shape[0],
        n_u=B.shape[1],
    )


def linear_controller(A, B, C, D) -> ControllerModel:
    """x_c' = A x_c + B xhat_p, u = C x_c + D xhat_p, with exact Jacobians."""
    A, B, C, D = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, C, D))
    n_c = A.shape[0]
    if A.shape != (n_c, n_c) or B.shape[0] != n_c or C.shape[1] != n_c or D.shape[0] != C.shape[0]:
        raise DimensionMismatch(
            f"inconsistent controller matrices A{A.shape} B{B.shape} C{C.shape} D{D.shape}"
        )
    return ControllerModel(
        f_c=lambda xc, xh: A @ xc + B @ xh,
        g_c=lambda xc, xh: C @ xc + D @ xh,
        n_c=n_c,
        n_u=C.shape[0],
        dg_dxc=lambda xc, xh: C,
        dg_dxhat=lambda xc, xh: D,
    )


@dataclass(frozen=True)
class StateLayout:
    n_p: int
    n_c: int
    n_u: int

    @property
    def dim(self) -> int:
        return 2 * self.n_p + self.n_c + self.n_u + 2

    @property
    def eta_p(self) -> int:
        return 2 * self.n_p

    @property
    def eta_c(self) -> int:
        return self.dim - 1

    @property
    def plant_slice(self) -> slice:
        return slice(0, 2 * self.n_p + 1)

    @property
    def controller_slice(self) -> slice:
        return slice(2 * self.n_p + 1, self.dim)

    def split(self, q):
        """(x_p, e_p, eta_p, x_c, e_u, eta_c) views of q."""
        n_p, n_c = self.n_p, self.n_c
        a = 2 * n_p + 1
        b = a + n_c
        return q[:n_p], q[n_p : 2 * n_p], q[2 * n_p], q[a:b], q[b:-1], q[-1]

    def pack(self, x_p, e_p, eta_p, x_c, e_u, eta_c) -> np.ndarray:
        q = np.concatenate(
            [np.atleast_1d(x_p), np.atleast_1d(e_p), [eta_p], np.atleast_1d(x_c), np.atleast_1d(e_u), [eta_c]]
        ).astype(float)
        if q.shape != (self.dim,):
            raise DimensionMismatch(f"packed state has shape {q.shape}, expected ({self.dim},)")
        return q

    def local_states(self, q):
        x_p, e_p, eta_p, x_c, e_u, eta_c = self.split(q)
        return LocalState(x_p, e_p, float(eta_p)), LocalState(x_c, e_u, float(eta_c))

    def column_names(self) -> List[str]:
        def names(base, n):
            return [base] if n == 1 else [f"{base}_{i}" for i in range(n)]

        return (
            names("x_p", self.n_p)
            + names("e_p", self.n_p)
            + ["eta_p"]
            + names("x_c", self.n_c)
            + names("e_u", self.n_u)
            + ["eta_c"]
        )


@dataclass
class ClosedLoopState:
    q_p: LocalState
    q_c: LocalState

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.q_p.x, self.q_p.e, [self.q_p.eta], self.q_c.x, self.q_c.e, [self.q_c.eta]]
        ).astype(float)

    @classmethod
    def from_vector(cls, q, layout: StateLayout) -> "ClosedLoopState":
        p, c = layout.local_states(np.asarray(q, dtype=float))
        return cls(p, c)


def closed_loop_flow(q, layout: StateLayout, plant: PlantModel, plant_sampler: SamplerModel,
                     controller: ControllerModel, controller_sampler: SamplerModel) -> np.ndarray:
    x_p, e_p, _, x_c, e_u, _ = layout.split(q)
    x_m = plant.g_p(x_p)
    xhat = x_p + e_p
    u = np.asarray(controller.g_c(x_c, xhat), dtype=float)
    uhat = u + e_u
    fp = np.asarray(plant.f_p(x_p, uhat), dtype=float)
    xhat_dot = np.asarray(plant_sampler.flow(xhat, x_m, uhat), dtype=float)
    xc_dot = np.asarray(controller.f_c(x_c, xhat), dtype=float)
    u_dot = controller.output_rate(x_c, xhat, xc_dot, xhat_dot)
    uhat_dot = np.asarray(controller_sampler.flow(uhat, u), dtype=float)
    return np.concatenate([fp, xhat_dot - fp, _ONE, xc_dot, uhat_dot - u_dot, _ONE])


_ONE = np.ones(1)


def _plant_reset(q, layout, plant, plant_sampler):
    q = q.copy()
    x_p, e_p, _, _, _, _ = layout.split(q)
    xhat_new = np.asarray(plant_sampler.jump(x_p + e_p, plant.g_p(x_p)), dtype=float)
    q[layout.n_p : 2 * layout.n_p] = xhat_new - x_p
    q[layout.eta_p] = 0.0
    return q


def _controller_reset(q, layout, controller, controller_sampler):
    q = q.copy()
    x_p, e_p, _, x_c, e_u, _ = layout.split(q)
    u = np.asarray(controller.g_c(x_c, x_p + e_p), dtype=float)
    uhat_new = np.asarray(controller_sampler.jump(u + e_u, u), dtype=float)
    b = 2 * layout.n_p + 1 + layout.n_c
    q[b : b + layout.n_u] = uhat_new - u
    q[layout.eta_c] = 0.0
    return q


def closed_loop_jump(q, plant_fired: bool, controller_fired: bool, layout: StateLayout,
                     plant: PlantModel, plant_sampler: SamplerModel,
                     controller: ControllerModel, controller_sampler: SamplerModel) -> List[np.ndarray]:
    """Successor states of the jump map.

    A plant-only jump resets the plant sampler and leaves q_c untouched, a
    controller-only jump the converse.  When both fired the result is the
    two-element set {plant-reset, controller-reset}: the first jump of either
    ordering of two successive jumps.
    """
    q = np.asarray(q, dtype=float)
    out = []
    if plant_fired:
        out.append(_plant_reset(q, layout, plant, plant_sampler))
    if controller_fired:
        out.append(_controller_reset(q, layout, controller, controller_sampler))
    if not out:
        raise ValueError("closed_loop_jump called with no trigger fired")
    return out


@dataclass
class ETCSystem(HybridSystemDef):
    """Closed-loop hybrid system with access to its parts."""

    layout: StateLayout = None
    plant: PlantModel = None
    plant_sampler: SamplerModel = None
    controller: ControllerModel = None
    controller_sampler: SamplerModel = None
    trigger_p: TriggerSpec = None
    trigger_c: TriggerSpec = None

    def local_states(self, q):
        return self.layout.local_states(np.asarray(q, dtype=float))

    def storages(self, q):
        """(V_p, W_p, V_c, W_u) at q."""
        p, c = self.local_states(q)
        tp, tc = self.trigger_p, self.trigger_c
        return tp.V(*p), tp.W(p.e), tc.V(*c), tc.W(c.e)

    def initial_state(self, x_p0, x_c0, e_p0=None, e_u0=None, eta_p0=0.0, eta_c0=0.0):
        L = self.layout
        e_p0 = np.zeros(L.n_p) if e_p0 is None else e_p0
        e_u0 = np.zeros(L.n_u) if e_u0 is None else e_u0
        return L.pack(x_p0, e_p0, eta_p0, x_c0, e_u0, eta_c0)


def build_closed_loop(plant: PlantModel, plant_sampler: SamplerModel, controller: ControllerModel,
                      controller_sampler: SamplerModel, trigger_p: TriggerSpec,
                      trigger_c: TriggerSpec) -> ETCSystem:
    """Assemble C = C_p x C_c, D = D_p or D_c, F = (F1, F2), G = (G1, G2)."""
    if plant.n_u != controller.n_u:
        raise DimensionMismatch(f"plant expects n_u={plant.n_u}, controller produces n_u={controller.n_u}")
    layout = StateLayout(plant.n_p, controller.n_c, controller.n_u)
    _probe_dimensions(layout, plant, plant_sampler, controller, controller_sampler)
    parts = (layout, plant, plant_sampler, controller, controller_sampler)

    def flow_map(q):
        return closed_loop_flow(q, *parts)

    def in_flow_set(q):
        p, c = layout.local_states(q)
        return flow_allowed(p, trigger_p) and flow_allowed(c, trigger_c)

    def in_jump_set(q):
        p, c = layout.local_states(q)
        return trigger_fired(p, trigger_p)[0] or trigger_fired(c, trigger_c)[0]

    def jump_map(q) -> Sequence[Successor]:
        p, c = layout.local_states(q)
        fp, cause_p = trigger_fired(p, trigger_p)
        fc, cause_c = trigger_fired(c, trigger_c)
        states = closed_loop_jump(q, fp, fc, layout, plant, plant_sampler, controller, controller_sampler)
        labels = ([("plant", cause_p)] if fp else []) + ([("controller", cause_c)] if fc else [])
        return [Successor(s, who, cause) for s, (who, cause) in zip(states, labels)]

    return ETCSystem(
        flow_map=flow_map,
        jump_map=jump_map,
        in_flow_set=in_flow_set,
        in_jump_set=in_jump_set,
        dim=layout.dim,
        meta={
            "layout": (layout.n_p, layout.n_c, layout.n_u),
            "timer_index": (layout.eta_p, layout.eta_c),
            "tau_p": trigger_p.tau_min,
            "tau_pi": trigger_p.tau_max,
            "tau_c": trigger_c.tau_min,
            "tau_kappa": trigger_c.tau_max,
            "columns": layout.column_names(),
        },
        layout=layout,
        plant=plant,
        plant_sampler=plant_sampler,
        controller=controller,
        controller_sampler=controller_sampler,
        trigger_p=trigger_p,
        trigger_c=trigger_c,
    )


def _probe_dimensions(layout, plant, plant_sampler, controller, controller_sampler):
    x_p = np.zeros(layout.n_p)
    x_c = np.zeros(layout.n_c)
    u = np.zeros(layout.n_u)
    checks = [
        ("f_p", plant.f_p(x_p, u), layout.n_p),
        ("g_p", plant.g_p(x_p), plant.n_m),
        ("f_c", controller.f_c(x_c, x_p), layout.n_c),
        ("g_c", controller.g_c(x_c, x_p), layout.n_u),
        ("plant hold flow", plant_sampler.flow(x_p, plant.g_p(x_p), u), layout.n_p),
        ("plant hold jump", plant_sampler.jump(x_p, plant.g_p(x_p)), layout.n_p),
        ("controller hold flow", controller_sampler.flow(u, u), layout.n_u),
        ("controller hold jump", controller_sampler.jump(u, u), layout.n_u),
    ]
    for name, value, n in checks:
        shape = np.shape(value)
        if shape != (n,):
            raise DimensionMismatch(f"{name} returns shape {shape}, expected ({n},)")

"""Trigger rules of one sampler: storage V, threshold W and timer bounds.

A sampler with local state (x, e, eta) may flow on

    C_loc = {V > W and eta < tau_max} or {eta < tau_min}

and must jump on

    D_loc = {V <= W and eta >= tau_min} or {eta >= tau_max}.

The minimum interval tau_min is what rules out Zeno behaviour: however small
the error threshold, no two samples of one sampler are closer than tau_min.
The timeout is implemented as a crossing ``eta >= tau_max`` since exact
equality is not attainable numerically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Tuple

import numpy as np

__all__ = [
    "LocalState",
    "TriggerSpec",
    "QuadraticStorage",
    "QuadraticThreshold",
    "trigger_fired",
    "flow_allowed",
    "classify",
    "builtin_quadratic_specs",
]


class LocalState(NamedTuple):
    """Aggregate state (x, e, eta) of one subsystem plus its sampler."""

    x: np.ndarray
    e: np.ndarray
    eta: float


@dataclass(frozen=True)
class TriggerSpec:
    """Storage V(x, e, eta), threshold W(e) and sampling interval bounds.

    ``timer_slack`` is subtracted from both timer bounds in the predicates.
    It absorbs quantization of event times without changing the partition
    of the state space into flow and jump regions, and should be at least the
    solver's event tolerance: bisection places events up to one tolerance
    late, and a timer condition met "on time" must not be missed because of
    that lag.
    """

    V: Callable[[np.ndarray, np.ndarray, float], float]
    W: Callable[[np.ndarray], float]
    tau_min: float
    tau_max: float
    timer_slack: float = 1e-6

    def __post_init__(self):
        if not 0 < self.tau_min < self.tau_max:
            raise ValueError(
                f"need 0 < tau_min < tau_max, got tau_min={self.tau_min}, tau_max={self.tau_max}"
            )


@dataclass(frozen=True)
class QuadraticStorage:
    """V(x, e) = 1/2 x^T Q x + beta/2 |e|^2."""

    Q: np.ndarray
    beta: float = 0.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T):
            raise ValueError("Q must be a symmetric square matrix")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        object.__setattr__(self, "Q", Q)

    def __call__(self, x, e, eta=0.0) -> float:
        x = np.asarray(x, dtype=float)
        e = np.asarray(e, dtype=float)
        return 0.5 * float(x @ self.Q @ x) + 0.5 * self.beta * float(e @ e)


@dataclass(frozen=True)
class QuadraticThreshold:
    """W(e) = weight/2 |e|^2."""

    weight: float

    def __call__(self, e) -> float:
        e = np.asarray(e, dtype=float)
        return 0.5 * self.weight * float(e @ e)


def trigger_fired(q_local: LocalState, spec: TriggerSpec) -> Tuple[bool, str]:
    """Jump-set membership of one sampler and the disjunct responsible.

    Returns (fired, cause) where cause is "timeout", "threshold" or "" when
    not fired.  A timeout wins ties.
    """
    x, e, eta = q_local
    if eta >= spec.tau_max - spec.timer_slack:
        return True, "timeout"
    if eta >= spec.tau_min - spec.timer_slack and spec.V(x, e, eta) <= spec.W(e):
        return True, "threshold"
    return False, ""


def flow_allowed(q_local: LocalState, spec: TriggerSpec) -> bool:
    x, e, eta = q_local
    if eta < spec.tau_min - spec.timer_slack:
        return True
    return eta < spec.tau_max - spec.timer_slack and spec.V(x, e, eta) > spec.W(e)


def classify(q_local: LocalState, spec: TriggerSpec) -> str:
    """One of "flow", "jump", "both", "neither"."""
    f = flow_allowed(q_local, spec)
    d = trigger_fired(q_local, spec)[0]
    return {(True, False): "flow", (False, True): "jump", (True, True): "both"}.get(
        (f, d), "neither"
    )


def builtin_quadratic_specs(
    tau_p: float,
    tau_c: float,
    tau_pi: float = 60.0,
    tau_kappa: float = 120.0,
    beta_p: float = 1e-5,
    beta_c: float = 1e-5,
    plant_weight: float = 1.0,
    controller_weight: float = 0.2,
    n_p: int = 1,
    n_c: int = 1,
    timer_slack: float = 1e-6,
) -> Tuple[TriggerSpec, TriggerSpec]:
    """Quadratic storages and thresholds of the single-integrator example.

    V_p = 1/2 x_p^2 + beta_p/2 e_p^2,    W_p = (1 + beta_p)/2 e_p^2
    V_c = 1/10 x_c^2 + beta_c/2 e_u^2,   W_u = (1 + beta_c)/2 e_u^2
    """
    plant = TriggerSpec(
        V=QuadraticStorage(plant_weight * np.eye(n_p), beta_p),
        W=QuadraticThreshold(1.0 + beta_p),
        tau_min=tau_p,
        tau_max=tau_pi,
        timer_slack=timer_slack,
    )
    controller = TriggerSpec(
        V=QuadraticStorage(controller_weight * np.eye(n_c), beta_c),
        W=QuadraticThreshold(1.0 + beta_c),
        tau_min=tau_c,
        tau_max=tau_kappa,
        timer_slack=timer_slack,
    )
    return plant, controller

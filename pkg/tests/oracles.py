"""Reference solutions written without the simulation engine.

Everything here uses numpy/scipy directly and only the model equations of
the single-integrator example, so the tests compare the engine against an
independent implementation.
"""

import numpy as np
from scipy.linalg import expm


def integrator_matrix(k_p):
    """Flow of (x_p, e_p, x_c, e_u) under ZOH on both samplers.

    x_p' = -k x_c + e_u, e_p' = -x_p', x_c' = x_p + e_p - x_c,
    e_u' = -u' = k x_c'.
    """
    k = float(k_p)
    return np.array(
        [
            [0.0, 0.0, -k, 1.0],
            [0.0, 0.0, k, -1.0],
            [1.0, 1.0, -1.0, 0.0],
            [k, k, -k, 0.0],
        ]
    )


def segment_solution(A, z0, times):
    """z(t) = expm(A (t - t0)) z0 for t in `times`, t0 = times[0]."""
    t0 = times[0]
    return np.array([expm(A * (t - t0)) @ z0 for t in times])


def dense_first_plant_event(k_p, tau_p, beta=1e-5, dt=1e-4, t_max=10.0):
    """Time of the first plant sample by a fixed-step sweep.

    Between samples everything is linear, so the state is propagated with the
    exact matrix exponential over `dt` and the first grid time at which
    V_p <= W_p and eta_p >= tau_p is returned.  The controller does not sample
    before tau_c, which is assumed to exceed the returned time.
    """
    A = integrator_matrix(k_p)
    step = expm(A * dt)
    z = np.array([10.0, 0.0, 10.0, 0.0])
    n = int(round(t_max / dt))
    for i in range(1, n + 1):
        z = step @ z
        t = i * dt
        x, e = z[0], z[1]
        V = 0.5 * x * x + 0.5 * beta * e * e
        W = 0.5 * (1 + beta) * e * e
        if t >= tau_p - 1e-12 and V <= W:
            return t
    return None


def local_flow_set(V, W, eta, tau_min, tau_max, slack):
    return (V > W and eta < tau_max - slack) or eta < tau_min - slack


def local_jump_set(V, W, eta, tau_min, tau_max, slack):
    return (V <= W and eta >= tau_min - slack) or eta >= tau_max - slack

import json

import numpy as np
import pytest

from asyncetc import (
    EventRecord,
    GridSpec,
    HybridArc,
    HybridTime,
    check_small_gain,
    check_small_gain_system,
    clarke_estimate,
    monitor_storage,
    set_distance,
    simulate,
    verify_dwell,
)
from asyncetc.analysis import logical_jumps
from asyncetc.hybrid import Segment
from asyncetc.scenarios import build_system, builtin_integrator_scenario


def synthetic_arc(instants, t_end=None, tau=(1.0, 2.0)):
    """Arc with the given (t, kind) sampling instants, kind in P, C, B.

    Timers are reset at their sampler's instants so the arc is consistent.
    """
    t_end = t_end if t_end is not None else (instants[-1][0] + 1.0 if instants else 1.0)
    segments, events = [], []
    eta_p = eta_c = 0.0
    t0, j = 0.0, 0

    def seg(ta, tb):
        times = np.array([ta, tb])
        q0 = np.array([1.0, 0.0, eta_p, 1.0, 0.0, eta_c])
        q1 = q0 + np.array([0, 0, tb - ta, 0, 0, tb - ta])
        return Segment(j, times, np.vstack([q0, q1]))

    for t, kind in instants:
        segments.append(seg(t0, t))
        eta_p += t - t0
        eta_c += t - t0
        if kind == "B":
            for _ in range(2):
                j += 1
                events.append(EventRecord(HybridTime(t, j), "both", "forced-simultaneous"))
                if j % 2:
                    segments.append(Segment(j, np.array([t]), np.array([[1.0, 0, 0.0, 1.0, 0, eta_c]])))
            eta_p = eta_c = 0.0
        else:
            j += 1
            events.append(EventRecord(HybridTime(t, j), {"P": "plant", "C": "controller"}[kind], "threshold"))
            if kind == "P":
                eta_p = 0.0
            else:
                eta_c = 0.0
        t0 = t
    segments.append(seg(t0, t_end))
    meta = {"tau_p": tau[0], "tau_c": tau[1], "tau_pi": 60.0, "tau_kappa": 120.0,
            "timer_index": (2, 5), "layout": (1, 1, 1)}
    return HybridArc(segments, events, "t_end", "", meta)


# ---------------------------------------------------------------- dwell


def test_zero_jump_arc_is_clean():
    report = verify_dwell(synthetic_arc([], t_end=5.0))
    assert report.ok and report.plant_jumps == report.controller_jumps == 0


def test_well_spaced_arc_is_clean():
    arc = synthetic_arc([(1.0, "P"), (2.0, "C"), (3.0, "P"), (4.5, "B"), (6.0, "P")])
    report = verify_dwell(arc)
    assert report.ok, report.violations
    assert (report.plant_jumps, report.controller_jumps, report.simultaneous_jumps) == (3, 1, 1)
    assert report.min_plant_gap == pytest.approx(1.5)
    assert report.tau_a == 0.5
    assert report.N_r == pytest.approx(1.0 / 3.0)


def test_simultaneous_pair_is_one_instant():
    arc = synthetic_arc([(1.0, "P"), (3.0, "B")])
    kinds = [J.kind for J in logical_jumps(arc)]
    assert kinds == ["P", "B"]
    assert arc.n_jumps == 3


@pytest.mark.parametrize(
    "instants,check",
    [
        ([(1.0, "P"), (1.5, "P")], "plant_gap"),
        ([(2.0, "C"), (3.0, "C")], "controller_gap"),
        ([(1.0, "B"), (1.5, "P")], "plant_gap"),
        ([(1.0, "C"), (2.0, "B")], "controller_gap"),
    ],
)
def test_injected_close_pair_is_flagged(instants, check):
    report = verify_dwell(synthetic_arc(instants))
    v = report.violations_of(check)
    assert v and v[0]["observed"] < v[0]["required"]


def test_timer_overrun_is_flagged():
    arc = synthetic_arc([], t_end=61.0)
    report = verify_dwell(arc)
    assert report.violations_of("timer_p") and not report.violations_of("timer_c")


def _random_admissible_instants(rng, tau_p, tau_c, horizon):
    """Instants whose per-sampler gaps respect tau_p and tau_c."""
    # millisecond grid so that coincident instants occur
    def stream(tau):
        t, out = 0, []
        while True:
            t += round(1000 * tau * (1.0 + rng.exponential(rng.choice([0.01, 0.3, 2.0]))))
            if t > 1000 * horizon:
                return out
            out.append(t / 1000)

    p = stream(tau_p)
    c = stream(tau_c)
    if rng.random() < 0.5 and p:
        c = sorted(set(c) | {p[len(p) // 2]})
        c = [t for k, t in enumerate(c) if k == 0 or t - c[k - 1] >= tau_c]
    both = set(p) & set(c)
    inst = [(t, "B") for t in both] + [(t, "P") for t in p if t not in both] + [(t, "C") for t in c if t not in both]
    return sorted(inst)


def test_gap_checks_imply_average_dwell_with_offset_two():
    rng = np.random.default_rng(2024)
    for _ in range(300):
        tau_p, tau_c = np.round(rng.uniform(0.1, 2.0, size=2), 3)
        inst = _random_admissible_instants(rng, tau_p, tau_c, 30.0)
        report = verify_dwell(synthetic_arc(inst, tau=(tau_p, tau_c)), offset=2.0)
        assert not report.violations_of("plant_gap") and not report.violations_of("controller_gap")
        assert not report.violations_of("average_dwell"), (tau_p, tau_c, inst)


def test_gap_checks_do_not_imply_average_dwell_with_offset_one():
    # each sampler respects its own gap, yet two instants 0.1 s apart give
    # j - i = 2 over an interval with (t - s)/tau_a + 1 = 1.2
    arc = synthetic_arc([(1.0, "P"), (1.1, "C")])
    report = verify_dwell(arc, offset=1.0)
    assert not report.violations_of("plant_gap") and not report.violations_of("controller_gap")
    (v,) = report.violations_of("average_dwell")
    assert v["observed"] == 2 and v["required"] == pytest.approx(1.2, abs=1e-5)


def test_average_dwell_brute_force_agrees():
    rng = np.random.default_rng(8)
    for _ in range(50):
        inst = _random_admissible_instants(rng, 0.6, 0.9, 10.0)
        arc = synthetic_arc(inst, tau=(0.6, 0.9))
        tau_a = 0.3
        T = [J.t for J in logical_jumps(arc)]
        brute = any(
            (b - a + 1) > (T[b] - T[a] + 1e-6) / tau_a + 1.0 + 1e-12
            for a in range(len(T)) for b in range(a, len(T))
        )
        assert bool(verify_dwell(arc).violations_of("average_dwell")) == brute


def test_dwell_on_fine_regime(regime_runs):
    cfg, _, arc = regime_runs["fig56"]
    report = verify_dwell(arc, tolerance=1e-4, offset=2.0)
    assert report.ok
    assert report.min_plant_gap >= 0.2 - 1e-4 and report.min_controller_gap >= 0.3 - 1e-4


def test_report_serializes():
    d = verify_dwell(synthetic_arc([(1.0, "P"), (1.1, "C")])).to_dict()
    json.dumps(d)
    assert d["violations"][0]["check"] == "average_dwell"


# ---------------------------------------------------------------- storage


def test_monitor_storage_no_flags_zoh(regime_runs):
    for cfg, system, arc in regime_runs.values():
        rep = monitor_storage(arc, system.trigger_p.V, system.trigger_c.V)
        assert not [f for f in rep.jump_flags if f["quantity"] in ("V_p", "V_c")]
        assert np.all(rep.trace.U >= 0) and np.all(np.isfinite(rep.trace.U))


def test_monitor_storage_origin_is_zero():
    cfg = builtin_integrator_scenario(0.5, 1.0, 2.0, t_end=5.0)
    system, _ = build_system(cfg)
    arc = simulate(system, system.initial_state([0.0], [0.0]), cfg.solver)
    rep = monitor_storage(arc, system.trigger_p.V, system.trigger_c.V)
    assert np.all(rep.trace.U == 0.0) and not rep.jump_flags


def test_divergent_run_is_non_convergent(regime_runs):
    _, system, arc = regime_runs["fig2"]
    rep = monitor_storage(arc, system.trigger_p.V, system.trigger_c.V)
    assert rep.non_convergent and rep.tail_growth > 2


def test_bounded_run_is_not_flagged_non_convergent(regime_runs):
    _, system, arc = regime_runs["fig56"]
    assert not monitor_storage(arc, system.trigger_p.V, system.trigger_c.V).non_convergent


def test_monitor_flags_increasing_jump():
    arc = synthetic_arc([(1.0, "P")])
    arc.segments[1].states[0, 0] = 5.0  # plant state jumps up
    V = lambda x, e, eta: 0.5 * float(x @ x)
    rep = monitor_storage(arc, V, V)
    assert {f["quantity"] for f in rep.jump_flags} == {"V_p", "U"}


# ---------------------------------------------------------------- Clarke


def test_clarke_smooth():
    assert clarke_estimate(lambda x: float(x[0] ** 2), 1.0, 1.0, y_radius=1e-4,
                           h_grid=np.geomspace(1e-4, 1e-6, 5)) == pytest.approx(2.0, abs=1e-3)


def test_clarke_abs():
    assert clarke_estimate(lambda x: abs(float(x[0])), 0.0, 1.0) == pytest.approx(1.0, abs=1e-3)


def test_clarke_zero_direction():
    assert clarke_estimate(lambda x: float(x @ x), np.ones(3), np.zeros(3)) == 0.0


@pytest.mark.parametrize("coef", [[1.0, -2.0, 0.5], [0.0, 3.0, 0.0, -1.0], [2.0, 0.0, 0.0, 0.0, 1.0]])
def test_clarke_polynomials_converge_to_gradient(coef):
    poly = np.polynomial.Polynomial(coef)
    x, v = 0.7, -1.3
    exact = poly.deriv()(x) * v
    est = clarke_estimate(lambda y: float(poly(y[0])), x, v, h_grid=[1e-6], y_radius=0.0, n_samples=1)
    assert est == pytest.approx(exact, rel=1e-3)


def test_clarke_multivariate_max_norm():
    # Clarke derivative of max(|x1|, |x2|) at 0 along (1, 1) is 1
    f = lambda y: float(np.max(np.abs(y)))
    assert clarke_estimate(f, np.zeros(2), np.ones(2)) == pytest.approx(1.0, abs=1e-3)


def test_set_distance():
    assert set_distance([3.0, 0.0], [0.0, 0.0], [1.0, 1.0]) == pytest.approx(2.0)
    assert set_distance([0.5, 0.5], 0.0, 1.0) == 0.0


# ---------------------------------------------------------------- small gain


def _scalar_pair_check(chi_p, chi_c, alpha_p, **kw):
    grid = GridSpec.uniform([-2.0, -2.0], [2.0, 2.0], 21)
    return check_small_gain(
        lambda qp: 0.5 * float(qp @ qp),
        lambda qc: 0.5 * float(qc @ qc),
        chi_p, chi_c, alpha_p, lambda r: 0.0,
        lambda q: -0.5 * q,
        grid,
        split=lambda q: (q[:1], q[1:]),
        dist_p=lambda qp: float(np.linalg.norm(qp)),
        dist_c=lambda qc: float(np.linalg.norm(qc)),
        **kw,
    )


def test_small_gain_item4_holds():
    rep = _scalar_pair_check(lambda s: s / 2, lambda s: s / 2, lambda r: 0.0)
    assert not rep.violations["item4"] and rep.checked["item4"] > 0


def test_small_gain_item4_violated_everywhere():
    rep = _scalar_pair_check(lambda s: 2 * s, lambda s: s, lambda r: 0.0)
    assert len(rep.violations["item4"]) == rep.checked["item4"] > 0


def test_small_gain_decoupled_error_free_slice():
    # V_p = x^2/2 along x' = -0.5 x decreases at rate -0.5 x^2 <= -0.4 x^2
    ok = _scalar_pair_check(lambda s: 0.0, lambda s: np.inf, lambda r: 0.4 * r * r)
    assert not ok.violations["item2"] and ok.checked["item2"] == 21 * 21
    bad = _scalar_pair_check(lambda s: 0.0, lambda s: np.inf, lambda r: 0.6 * r * r)
    assert len(bad.violations["item2"]) == 21 * 20  # every point except x_p = 0


def test_small_gain_item1_and_item5():
    sandwich = (lambda r: 0.25 * r * r, lambda r: r * r, lambda r: 0.25 * r * r, lambda r: r * r)
    rep = _scalar_pair_check(lambda s: s / 2, lambda s: s / 2, lambda r: 0.0,
                             sandwich=sandwich, rho=lambda r: 0.75 * r)
    assert not rep.violations["item1"] and not rep.violations["item5"]
    tight = (lambda r: 0.6 * r * r, lambda r: r * r, lambda r: 0.25 * r * r, lambda r: r * r)
    rep = _scalar_pair_check(lambda s: s / 2, lambda s: s / 2, lambda r: 0.0,
                             sandwich=tight, rho=lambda r: 2.5 * r)
    assert rep.violations["item1"] and rep.violations["item5"]


def test_small_gain_on_closed_loop_system():
    cfg = builtin_integrator_scenario(0.5, 1.0, 2.0)
    system, _ = build_system(cfg)
    grid = GridSpec([(-2, 2, 5), (-2, 2, 5), (0.0, 1.5, 2), (-2, 2, 5), (-2, 2, 5), (0.0, 2.5, 2)])
    rep = check_small_gain_system(system, lambda s: s / 2, lambda s: s / 2, lambda r: 0.0, lambda r: 0.0, grid)
    assert rep.checked["item3"] > 0 and not rep.violations["item3"]
    assert rep.coverage["grid_points"] == grid.size == 2500
    doc = json.loads(rep.to_json())
    assert set(doc["violation_counts"]) == {f"item{i}" for i in range(1, 6)}
    assert rep.violations_csv().splitlines()[0] == "item,grid_index,point,measured,bound"

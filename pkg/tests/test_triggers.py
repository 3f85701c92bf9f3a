import numpy as np
import pytest

from asyncetc import (
    LocalState,
    QuadraticStorage,
    QuadraticThreshold,
    TriggerSpec,
    builtin_quadratic_specs,
    flow_allowed,
    trigger_fired,
)
from asyncetc.triggers import classify

from oracles import local_flow_set, local_jump_set

ONE = np.array([1.0])
ZERO = np.array([0.0])


@pytest.fixture
def specs():
    return builtin_quadratic_specs(1.0, 2.0)


def test_builtin_storage_values(specs):
    plant, ctrl = specs
    assert plant.V(np.array([10.0]), ZERO, 0.0) == 50.0
    assert ctrl.V(np.array([10.0]), ZERO, 0.0) == 10.0
    assert ctrl.W(ZERO) == 0.0
    assert plant.W(np.array([2.0])) == pytest.approx(2.0 * (1 + 1e-5))
    assert (plant.tau_max, ctrl.tau_max) == (60.0, 120.0)


def test_not_fired_at_start(specs):
    plant, _ = specs
    assert trigger_fired(LocalState(np.array([10.0]), ZERO, 0.0), plant) == (False, "")


def test_equality_boundary_fires_as_threshold(specs):
    plant, _ = specs
    q = LocalState(ONE, ONE, 1.5)
    assert plant.V(*q) == plant.W(q.e) == pytest.approx(0.500005, abs=1e-15)
    assert trigger_fired(q, plant) == (True, "threshold")
    assert not flow_allowed(q, plant)


def test_timeout_fires(specs):
    plant, ctrl = specs
    for spec in (plant, ctrl):
        q = LocalState(np.array([5.0]), ZERO, spec.tau_max)
        assert trigger_fired(q, spec) == (True, "timeout")


def test_timeout_wins_tie(specs):
    plant, _ = specs
    assert trigger_fired(LocalState(ONE, ONE, 60.0), plant) == (True, "timeout")


def test_flow_examples(specs):
    plant, _ = specs
    # below tau_min flow is allowed whatever V and W
    assert flow_allowed(LocalState(ZERO, np.array([3.0]), 0.5), plant)
    assert flow_allowed(LocalState(np.array([5.0]), ZERO, 60.0 - 1e-3), plant)
    q = LocalState(ZERO, np.array([3.0]), 5.0)
    assert not flow_allowed(q, plant) and trigger_fired(q, plant)[0]


def _random_local(rng, n=1):
    x = rng.normal(scale=rng.choice([0.01, 1.0, 10.0]), size=n)
    e = rng.normal(scale=rng.choice([0.01, 1.0, 10.0]), size=n)
    eta = rng.uniform(0.0, 65.0)
    return LocalState(x, e, eta)


def test_predicate_table_randomized(specs):
    plant, _ = specs
    rng = np.random.default_rng(7)
    seen = set()
    for _ in range(100_000):
        q = _random_local(rng)
        V, W = plant.V(*q), plant.W(q.e)
        c = local_flow_set(V, W, q.eta, plant.tau_min, plant.tau_max, plant.timer_slack)
        d = local_jump_set(V, W, q.eta, plant.tau_min, plant.tau_max, plant.timer_slack)
        assert flow_allowed(q, plant) == c
        assert trigger_fired(q, plant)[0] == d
        kind = classify(q, plant)
        assert kind != "neither"
        seen.add(kind)
    assert seen == {"flow", "jump"}


def test_predicates_partition_boundaries(specs):
    plant, _ = specs
    for eta in (plant.tau_min - 1e-6, plant.tau_min, plant.tau_max - 1e-6, plant.tau_max, 70.0):
        for x, e in ((ONE, ONE), (ONE, ZERO), (ZERO, ONE), (ZERO, ZERO)):
            q = LocalState(x, e, eta)
            assert flow_allowed(q, plant) != trigger_fired(q, plant)[0]


def test_threshold_trigger_monotone_in_timer(specs):
    plant, _ = specs
    rng = np.random.default_rng(3)
    checked = 0
    for _ in range(2000):
        q = _random_local(rng)
        fired, cause = trigger_fired(q, plant)
        if cause != "threshold":
            continue
        for eta in np.linspace(q.eta, plant.tau_max, 7):
            assert trigger_fired(LocalState(q.x, q.e, float(eta)), plant)[0]
        checked += 1
    assert checked > 100


def test_builtin_quadratics_nonnegative_and_zero_sets(specs):
    rng = np.random.default_rng(5)
    for spec in specs:
        for _ in range(1000):
            x, e = rng.normal(size=1), rng.normal(size=1)
            assert spec.V(x, e, 0.0) > 0.0
            assert spec.W(e) > 0.0
        assert spec.V(ZERO, ZERO, 0.0) == 0.0
        assert spec.W(ZERO) == 0.0
        assert spec.V(ONE, ZERO, 0.0) > 0.0 and spec.V(ZERO, ONE, 0.0) > 0.0


def test_quadratic_storage_matrix():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    V = QuadraticStorage(Q, beta=0.3)
    x, e = np.array([1.0, -2.0]), np.array([0.5, 0.5])
    assert V(x, e) == pytest.approx(0.5 * x @ Q @ x + 0.15 * e @ e)
    assert QuadraticThreshold(3.0)(e) == pytest.approx(0.75)


@pytest.mark.parametrize("Q", [[[1.0, 2.0], [0.0, 1.0]], [[-1.0]]])
def test_quadratic_storage_rejects_bad_weights(Q):
    with pytest.raises(ValueError):
        QuadraticStorage(np.array(Q))


@pytest.mark.parametrize("lo,hi", [(0.0, 1.0), (2.0, 1.0), (1.0, 1.0)])
def test_trigger_spec_rejects_bad_intervals(lo, hi):
    with pytest.raises(ValueError):
        TriggerSpec(V=QuadraticStorage(np.eye(1)), W=QuadraticThreshold(1.0), tau_min=lo, tau_max=hi)

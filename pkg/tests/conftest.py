import numpy as np
import pytest

from asyncetc import builtin_integrator_scenario, simulate
from asyncetc.scenarios import EXAMPLES, build_system


def _run(name):
    cfg = builtin_integrator_scenario(*EXAMPLES[name])
    system, q0 = build_system(cfg)
    arc = simulate(system, q0, cfg.solver)
    return cfg, system, arc


@pytest.fixture(scope="session")
def regime_runs():
    """Arcs of the three built-in regimes, simulated once per session."""
    return {name: _run(name) for name in EXAMPLES}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")

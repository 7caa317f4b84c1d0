import time

import pytest

from lifecycle import GompertzParams, SolverSettings, calibrate
from lifecycle.montecarlo import SimConfig, simulate_hazard_paths

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def params():
    return GompertzParams()


@pytest.fixture(scope="session")
def settings():
    return SolverSettings()


class _Calibrations(dict):
    """Lazily calibrated models keyed by ``(sigma, horizon)``; records wall time."""

    def __init__(self, params, settings):
        super().__init__()
        self.params = params
        self.settings = settings
        self.seconds = {}

    def get(self, sigma, horizon=55.0):
        key = (sigma, horizon)
        if key not in self:
            t0 = time.perf_counter()
            self[key] = calibrate(self.params, sigma, self.settings, horizon)
            self.seconds[key] = time.perf_counter() - t0
        return self[key]


@pytest.fixture(scope="session")
def calibrations(params, settings):
    return _Calibrations(params, settings)


@pytest.fixture(scope="session")
def mc_ensemble(calibrations):
    """10^5 calibrated sigma=0.15 paths to t=35, with generation time."""
    model = calibrations.get(0.15).model
    t0 = time.perf_counter()
    ens = simulate_hazard_paths(model, SimConfig(n_paths=100_000), 35.0)
    return ens, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def accept():
    """Record one acceptance verdict line, print it, and fail the test when not ok."""
    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record

import numpy as np
import pytest

from livewdd.hermite import build_basis, default_sigma
from livewdd.live import LiveReconstructor
from livewdd.reference import wdd_reconstruct
from livewdd.simulator import simulate_validation
from livewdd.wiener import build_filter_bank


@pytest.fixture(scope="session")
def validation64():
    """Noise-free 64 px validation object, reciprocal probe and dataset."""
    return simulate_validation(64)


@pytest.fixture(scope="session")
def reference64(validation64):
    _, probe_recip, ds = validation64
    return wdd_reconstruct(ds, probe_recip)


@pytest.fixture(scope="session")
def live64(validation64):
    _, probe_recip, ds = validation64
    g = ds.geometry
    basis = build_basis(g.detector_shape, 16, default_sigma(g))
    bank = build_filter_bank(g, probe_recip, basis, 0.01)
    return LiveReconstructor(g, bank, basis)


@pytest.fixture(scope="session")
def small():
    """32 px validation setup, cheap enough for per-test reconstruction."""
    obj, probe_recip, ds = simulate_validation(32)
    g = ds.geometry
    basis = build_basis(g.detector_shape, 8, default_sigma(g))
    bank = build_filter_bank(g, probe_recip, basis, 0.01)
    return obj, probe_recip, ds, LiveReconstructor(g, bank, basis)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def report_criterion(request):
    """Record one ``<id> PASS|FAIL|INFO <details>`` line for the end-of-run summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(cid: str, status: str, details: str) -> None:
        line = f"{cid} {status} {details}"
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)

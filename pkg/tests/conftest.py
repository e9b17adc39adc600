import numpy as np
import pytest

from sindy_delay.models import EnsoSpec, generate_enso
from sindy_delay.timeseries import NoiseSpec


@pytest.fixture(scope="session")
def enso_clean():
    """Noiseless ENSO data, N=4000, dt=0.025, with exact derivatives."""
    truth, observed = generate_enso(EnsoSpec(n_samples=4000, dt=0.025))
    return truth, observed


@pytest.fixture(scope="session")
def enso_short_noisy():
    truth, observed = generate_enso(
        EnsoSpec(n_samples=200, dt=0.25, noise=NoiseSpec(0.02, 0)))
    return truth, observed


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; printed at session end."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}"
        if detail:
            line += f" ({detail})"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

import itertools

import numpy as np
import pytest

from genpolicy.dataset import SimulationConfig, simulate


def corner_max(psi, l, u):
    """Largest self-normalised mean of ``psi`` over all corners ``{l, u}^n``."""
    psi = np.asarray(psi, dtype=float)
    best, arg = -np.inf, None
    for bits in itertools.product((l, u), repeat=psi.size):
        r = np.array(bits)
        v = r @ psi / r.sum()
        if v > best:
            best, arg = v, r
    return best, arg


@pytest.fixture(scope="session")
def small_sim():
    return simulate(SimulationConfig(n_train=300, n_target=5000, seed=11))


ACCEPTANCE_LINES = []


def record(number, name, passed, detail):
    """Log one acceptance line; the lines are repeated in the terminal summary."""
    line = f"criterion {number} [{name}]: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

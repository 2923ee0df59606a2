import numpy as np
import pytest


def central_diff(f, x, eps=1e-5):
    """Central finite-difference gradient of scalar ``f`` at flat vector ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, shown at the end of the run
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of a scalar function at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e.flat[j] = h
        g.flat[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b, floor=1e-12):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))


def random_spd_factor(rng, d, lo=0.5, hi=2.0):
    A = rng.normal(size=(d, d))
    Q, _ = np.linalg.qr(A)
    H = Q @ np.diag(rng.uniform(lo, hi, d)) @ Q.T
    return np.linalg.cholesky(H)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}
ACCEPTANCE_TABLES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_TABLES:
        terminalreporter.section("acceptance tables")
        for t in ACCEPTANCE_TABLES:
            terminalreporter.write_line(t)
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])

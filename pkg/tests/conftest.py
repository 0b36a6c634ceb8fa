import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def within_se(draws, target, k=3.0):
    """True if the sample mean lies within k standard errors of target."""
    draws = np.asarray(draws, float)
    se = draws.std(ddof=1) / np.sqrt(draws.size)
    return abs(draws.mean() - target) <= k * se


ACCEPTANCE = {}


def record_criterion(number, ok, detail=""):
    """Store a pass/fail line for the acceptance summary and return ``ok``."""
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

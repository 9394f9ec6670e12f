import math

import pytest

from ambicon.model import AmbiguityBand, RiskProfile


@pytest.fixture
def profile():
    # R_A = R_P = k = T = 1, a_max = 2, R = -1 (so R_0 = 0)
    return RiskProfile(1.0, 1.0, 1.0, 2.0, 1.0, -1.0)


def band(lo, hi):
    return AmbiguityBand(float(lo), float(hi))


def rel(a, b):
    return abs(a - b) / abs(b) if b else abs(a - b)


def golden_max(fn, lo, hi, tol=1e-12, iters=200):
    """Independent golden-section maximiser used as a test oracle."""
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    x1, x2 = b - g * (b - a), a + g * (b - a)
    f1, f2 = fn(x1), fn(x2)
    for _ in range(iters):
        if b - a < tol:
            break
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + g * (b - a)
            f2 = fn(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - g * (b - a)
            f1 = fn(x1)
    return (x1, f1) if f1 >= f2 else (x2, f2)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])

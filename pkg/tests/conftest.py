import math

import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile("ci", max_examples=60, deadline=None)
hypothesis.settings.load_profile("ci")


def cw_closed_form(state0, n, t):
    """Free-drift CW solution, x radial, y along-track, z cross-track."""
    x0, y0, z0, vx0, vy0, vz0 = state0
    s, c = math.sin(n * t), math.cos(n * t)
    nt = n * t
    return np.array([
        (4 - 3 * c) * x0 + s / n * vx0 + 2 / n * (1 - c) * vy0,
        6 * (s - nt) * x0 + y0 - 2 / n * (1 - c) * vx0 + (4 * s - 3 * nt) / n * vy0,
        c * z0 + s / n * vz0,
        3 * n * s * x0 + c * vx0 + 2 * s * vy0,
        -6 * n * (1 - c) * x0 - 2 * s * vx0 + (4 * c - 3) * vy0,
        -n * s * z0 + c * vz0,
    ])


def rk4_propagate(A, B, state, thrust, duration, h):
    s = np.array(state, dtype=float)
    u = np.array(thrust, dtype=float)
    f = lambda y: A @ y + B @ u  # noqa: E731
    for _ in range(int(round(duration / h))):
        k1 = f(s)
        k2 = f(s + 0.5 * h * k1)
        k3 = f(s + 0.5 * h * k2)
        k4 = f(s + h * k3)
        s = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return s


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_RESULTS: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; ``status`` is PASS, FAIL or TREND."""

    def record(name: str, ok: bool, detail: str = "", blocking: bool = True) -> bool:
        status = "PASS" if ok else ("FAIL" if blocking else "TREND-MISS")
        ACCEPTANCE_RESULTS.append((status, name, detail))
        print(f"{status}: {name} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for status, name, detail in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(f"{status}: {name} {detail}")

import numpy as np
import pytest

from featurecast.core import RngStream, TimeSeries


@pytest.fixture
def rng():
    return RngStream(1234, 0)


def make_series(values, period=1, sid="s"):
    return TimeSeries(sid, period, np.asarray(values, dtype=float))


# Acceptance criteria register their outcome here; the lines are printed in
# the terminal summary so they survive output capturing.
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

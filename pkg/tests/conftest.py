import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from sdde.grid_fn import Grid, GridFunction

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Filled by tests/test_acceptance.py, printed at the end of the run.
CRITERIA: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA):
        ok, line = CRITERIA[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {line}")


finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@st.composite
def grid_functions(draw, min_nodes=2, max_nodes=40, dims=(1, 3), a=None, b=None):
    n = draw(st.integers(min_nodes, max_nodes))
    d = draw(st.integers(*dims))
    if a is None:
        a = draw(st.floats(-3, 2))
    if b is None:
        b = a + draw(st.floats(0.05, 4))
    vals = draw(st.lists(st.lists(finite, min_size=d, max_size=d), min_size=n, max_size=n))
    return GridFunction(Grid(a, b, n), np.array(vals))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

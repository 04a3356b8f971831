import numpy as np
import pytest
from hypothesis import strategies as st

from accdeploy.env import EnvironmentSpace, TimeGrid
from accdeploy.surrogate import Theta


@st.composite
def grids(draw, max_groups=10):
    m2 = draw(st.integers(1, max_groups))
    if m2 == 1:
        return TimeGrid((0, 24))
    cuts = draw(
        st.lists(st.floats(0.05, 23.95, allow_nan=False), min_size=m2 - 1, max_size=m2 - 1, unique=True)
    )
    cuts = sorted(cuts)
    if any(b - a < 1e-3 for a, b in zip([0.0, *cuts], [*cuts, 24.0])):
        return TimeGrid.equal(m2)
    return TimeGrid((0.0, *cuts, 24.0))


@st.composite
def thetas(draw, grid: TimeGrid, max_clusters=6):
    m1 = draw(st.integers(1, max_clusters))
    t1 = draw(st.lists(st.floats(0, 10, allow_nan=False), min_size=m1, max_size=m1))
    base = draw(st.floats(-0.05, 0.05, allow_nan=False))
    lam = draw(
        st.lists(st.floats(-0.01, 0.01, allow_nan=False), min_size=grid.group_count - 1, max_size=grid.group_count - 1)
    )
    return Theta(t1, base, lam)


@pytest.fixture
def space16x8():
    return EnvironmentSpace.default()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria report, filled by test_acceptance and printed at the end of the session.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")

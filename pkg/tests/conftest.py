import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

#: criterion -> (passed, detail), filled by the acceptance tests
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)`` for the terminal summary."""

    def record(k, passed, detail=""):
        ACCEPTANCE[k] = (bool(passed), detail)

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_wells():
    from dislocgamma.wells import WellSet

    return WellSet([np.eye(2), np.diag([1.3, 0.8])])

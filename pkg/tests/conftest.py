import numpy as np
import pytest

from egonoise.geometry import ArrayGeometry
from egonoise.stft import StftConfig

# Acceptance results, filled by tests/test_acceptance.py and echoed at the end of the run.
ACCEPTANCE = {}


@pytest.fixture
def geom():
    return ArrayGeometry.uniform_circular()


@pytest.fixture
def cfg():
    return StftConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from conclab.fields import BoxGrid

# derandomized so the suite is reproducible run to run
settings.register_profile("repo", derandomize=True, deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

L_STD = 4 * math.pi


@pytest.fixture
def g32():
    return BoxGrid(2, L_STD, 32)


@pytest.fixture
def g64():
    return BoxGrid(2, L_STD, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}
N_CRITERIA = 12


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE and not any("test_acceptance" in r.nodeid for r in terminalreporter.stats.get("failed", [])):
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n not in ACCEPTANCE:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN or errored")
            continue
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from subsurr import kernels

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# PASS/FAIL lines of the acceptance suite, echoed after the run
ACCEPTANCE_LINES = []


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    prev = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

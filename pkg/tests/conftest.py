import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from weightrecon import _core_py

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

try:
    from weightrecon import _core
except ImportError:  # extension not built
    _core = None

BACKENDS = [pytest.param(_core_py, id="python")]
BACKENDS.append(pytest.param(_core, id="cython", marks=pytest.mark.skipif(_core is None, reason="extension not built")))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion; ``ok=None`` records a skip."""

    def record(number, ok, detail):
        tag = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"{tag} criterion {number}: {detail}"
        ACCEPTANCE[number] = line
        print(line)
        if ok is None:
            pytest.skip(detail)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])

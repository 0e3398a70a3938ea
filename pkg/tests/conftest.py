import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sentlm.numerics import precision

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SEEDS = (0, 1, 2)


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    n = marker.args[0]
    if n in ACCEPTANCE:
        detail = ACCEPTANCE[n][1]
    else:
        detail = str(call.excinfo.value).splitlines()[0][:200] if call.excinfo else ""
    ACCEPTANCE[n] = (report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

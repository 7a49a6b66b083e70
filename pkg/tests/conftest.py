import os
import sys

import pytest
from hypothesis import HealthCheck, settings

from laneform.model import Grid, ModelParams

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# coefficient sets of the three corridor examples
EX_I = ModelParams(h=0.3, gamma0=0.1, gamma1=0.2, gamma2=0.2, alpha=0.0)
EX_II = ModelParams(h=0.1, gamma0=0.001, gamma1=0.5, gamma2=0.4, alpha=0.2)
FIG1 = ModelParams(h=0.1, gamma0=0.001, gamma1=0.5, gamma2=0.4, alpha=0.0)


@pytest.fixture
def corridor():
    return Grid()


@pytest.fixture
def small_grid():
    return Grid(Lx=1.0, Ly=0.1, Nx=12, Ny=5)


# ---------------------------------------------------------------------------
# acceptance report: one PASS/FAIL line per criterion in the terminal summary

_criteria: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.skipped or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and call.excinfo is not None and not call.excinfo.errisinstance(AssertionError):
        detail = f"{call.excinfo.typename}: {call.excinfo.value}"
    _criteria[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, verdict, detail = _criteria[number]
        terminalreporter.write_line(f"{verdict} {number:2d} {title}: {detail}")

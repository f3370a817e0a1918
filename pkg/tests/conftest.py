import os
import time

import pytest

from ccpr.explore import region_boundary_2d, threshold_table
from ccpr.models import DegreeDistribution, DFold, SlottedAloha

WORKERS = os.cpu_count() or 1
_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    n, text = mark.args
    entry = _CRITERIA.setdefault(n, [text, True])
    entry[1] = entry[1] and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        text, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}")


TABLE_MODELS = {"aloha": SlottedAloha(), "2-fold": DFold(2), "3-fold": DFold(3)}


@pytest.fixture(scope="session")
def tables():
    """Full threshold tables at step 1e-4, L = 40, computed once per session."""
    return {name: threshold_table(m, workers=WORKERS) for name, m in TABLE_MODELS.items()}


D5 = DegreeDistribution.regular(5)
D2 = DegreeDistribution({2: 0.5102, 4: 0.4898})


@pytest.fixture(scope="session")
def regions():
    """Two-class boundaries for both policies and w = 1..4 at grid 0.01, plus wall time."""
    t0 = time.perf_counter()
    out = {(policy, w): region_boundary_2d(policy, D5, D2, w, L=40, grid_step=0.01)
           for policy in ("complete-sharing", "reservation") for w in (1, 2, 3, 4)}
    return out, time.perf_counter() - t0

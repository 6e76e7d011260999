import numpy as np
import pytest

from pulsed_wqed.emitter import EmitterParams

GAMMA = 4.364


@pytest.fixture
def ideal():
    return EmitterParams(GAMMA, 1.0, 0.0)


@pytest.fixture
def lossy():
    return EmitterParams(GAMMA, 0.9, 0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report ------------------------------------------------------

_CRITERIA = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    n, title = mark.args
    ok = call.excinfo is None
    detail = "" if ok else str(call.excinfo.value).splitlines()[0][:160]
    _CRITERIA[n] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)

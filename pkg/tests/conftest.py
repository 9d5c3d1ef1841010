import numpy as np
import pytest

from stmd.schedule import NoiseSchedule

_CRITERIA = {}


@pytest.fixture
def sched():
    return NoiseSchedule(0.1, 20.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def record(request):
    """Attach measured values to the criterion line printed at the end of the run."""
    marker = request.node.get_closest_marker("criterion")

    def _record(text):
        if marker is not None:
            _CRITERIA.setdefault(marker.args[0], {"ok": True, "notes": [], "seen": False})["notes"].append(text)
    return _record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when == "teardown" and report.passed:
        return
    entry = _CRITERIA.setdefault(marker.args[0], {"ok": True, "notes": [], "seen": False})
    if report.failed or report.skipped:
        entry["ok"] = False
    if report.when == "call":
        entry["seen"] = True


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        verdict = "PASS" if entry["ok"] and entry["seen"] else "FAIL"
        notes = "; ".join(entry["notes"])
        terminalreporter.write_line(f"criterion {number}: {verdict}" + (f"  ({notes})" if notes else ""))

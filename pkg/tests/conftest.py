import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by this test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    n, title = marker
    failed = report.failed
    passed = report.passed and report.when == "call"
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "ran": False, "details": []})
    if failed:
        entry["ok"] = False
    if passed or failed:
        entry["ran"] = entry["ran"] or report.when == "call"
    for key, value in report.user_properties:
        if key == "detail" and report.when == "call":
            entry["details"].append(value)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report._criterion = (marker.args[0], marker.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        entry = _criteria[n]
        status = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2} {status}  {entry['title']}")
        for detail in entry["details"]:
            terminalreporter.write_line(f"              {detail}")

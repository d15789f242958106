"""Collects the outcome of every test marked as an acceptance criterion and
prints one PASS/FAIL line per criterion after the run."""

import pytest

_results: list[tuple[str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    label = marker.args[0]
    if report.when == "call":
        _results.append((label, report.outcome))
    elif report.when == "setup" and report.outcome != "passed":
        # a broken or skipped fixture still yields a verdict line
        _results.append((label, report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome in _results:
        word = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{word}  {label}")

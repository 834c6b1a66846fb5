"""Prints one PASS/FAIL line per acceptance criterion after the run."""

import pytest

_ACCEPTANCE: list[tuple[str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if item.fspath.basename != "test_acceptance.py":
        return
    # record the call phase, or a setup that did not reach the call phase
    # (a failing session fixture counts against its criterion)
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        doc = item.function.__doc__ or item.name
        _ACCEPTANCE.append((doc.strip().splitlines()[0], report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome in _ACCEPTANCE:
        word = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{word}  {label}")

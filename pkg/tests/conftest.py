"""Shared fixtures: the acceptance report collector.

Each acceptance test records a single line through the ``criterion``
fixture; the collected lines are printed as their own section at the end
of the run so the pass/fail status of every numbered check is visible
even when pytest captures stdout.
"""

import pytest

_LINES = {}


@pytest.fixture
def criterion():
    def _record(num: int, passed: bool, detail: str):
        status = "PASS" if passed else "FAIL"
        _LINES[num] = f"criterion {num:2d}: {status}  {detail}"
        assert passed, f"criterion {num}: {detail}"

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_LINES):
        terminalreporter.write_line(_LINES[num])

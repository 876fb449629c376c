"""Shared pytest plumbing: collect acceptance pass/fail lines and print
them in the terminal summary (prints inside tests are otherwise captured)."""

import pytest

_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    def record(line: str) -> None:
        _LINES.append(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)

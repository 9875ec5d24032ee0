"""Shared test plumbing: the acceptance summary block.

test_acceptance appends one line per criterion; printing them from the
terminal-summary hook keeps them visible under pytest's fd capture.
"""

import pytest

acceptance_lines: list[str] = []


@pytest.hookimpl
def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)

"""Shared pytest wiring: the acceptance gate reports one line per criterion.

Lines are collected as the criteria run and re-emitted in the terminal
summary, so they are visible even under captured output.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

"""Shared pytest hooks.

test_acceptance.py appends one verdict line per criterion; echo them in a
dedicated section at the end of the run so the gate is readable at a glance.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

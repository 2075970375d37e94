"""Shared pytest plumbing.

The acceptance tests register one summary line each; printing them again
after the test table keeps the pass/fail verdicts visible even though
pytest captures stdout of passing tests.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance")
        for line in acceptance_lines:
            terminalreporter.write_line(line)

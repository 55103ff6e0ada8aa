"""Shared pytest hooks.

The acceptance tests register one PASS/FAIL line per criterion here; the
terminal-summary hook prints them after the run, outside output capture, so
they appear in any log regardless of capture mode.
"""

acceptance_results = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_results:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_results:
            terminalreporter.write_line(line)

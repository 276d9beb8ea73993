"""Shared pytest plumbing.

The acceptance tests each push one evidence line here; the summary hook
replays them through the terminal reporter so they show up even with
output capture on.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

"""Shared pytest plumbing: the acceptance tests append one PASS/FAIL line per
criterion to ACCEPTANCE_LINES and this hook prints them as a terminal section,
where capture cannot swallow them."""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

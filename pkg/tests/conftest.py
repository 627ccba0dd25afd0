"""Shared pytest plumbing: collects acceptance verdict lines and replays
them in the terminal summary so they stay visible under output capture."""

VERDICT_LINES: list[str] = []


def record_verdict(line: str) -> None:
    VERDICT_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not VERDICT_LINES:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for line in VERDICT_LINES:
        terminalreporter.write_line(line)

"""Collects acceptance verdict lines and repeats them after the run."""

VERDICTS: list[str] = []


def record(line: str) -> None:
    print(line)
    VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)

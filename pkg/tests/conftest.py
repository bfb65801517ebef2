import pytest

VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line; it is printed at the end of the run."""

    def record(number, name, ok, detail, seconds):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'} {name}: {detail} ({seconds:.1f}s)"
        VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

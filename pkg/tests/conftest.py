import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """``verdict(n, ok, detail)`` records one acceptance line and returns ``ok``; ``ok=None`` means skipped."""

    def record(criterion, ok, detail=""):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {criterion:>2}: {status}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)

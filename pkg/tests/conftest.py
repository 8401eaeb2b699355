import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record a one-line verdict for the acceptance summary and assert it."""

    def record(name: str, ok: bool, detail: str) -> None:
        _LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)

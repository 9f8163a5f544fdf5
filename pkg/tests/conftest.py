import pytest

_VERDICTS: list[tuple[str, str, str]] = []


@pytest.fixture
def verdict():
    """Record one acceptance line; returns the pass flag so tests can assert on it."""
    def record(name: str, ok: bool | None, detail: str) -> bool | None:
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        _VERDICTS.append((status, name, detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in _VERDICTS:
        terminalreporter.write_line(f"{status}  {name}: {detail}")

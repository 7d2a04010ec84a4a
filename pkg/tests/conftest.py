"""Shared fixtures; acceptance verdict lines are repeated after the test run."""
import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    def record(number, ok, detail: str) -> bool:
        """``ok`` is True, False, or None for a criterion that was not run."""
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"CRITERION {number}: {status} {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)

"""Collects one-line acceptance verdicts and prints them after the run."""

import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def report_criterion():
    def record(number, name: str, ok: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)

"""Collects one verdict per acceptance criterion and prints them after the run."""

import pytest

VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    def record(number: int, passed: bool, detail: str) -> None:
        VERDICTS[number] = (bool(passed), detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

from pathlib import Path

import pytest

from stance_threads.thread_model import load_thread

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def ottawa():
    return load_thread(FIXTURES / "ottawa.json")


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records a pass/fail line for the summary, then asserts."""
    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records one criterion line and asserts it."""

    def record(n: int, ok: bool, detail: str) -> None:
        ACCEPTANCE.append(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, f"criterion {n}: {detail}"

    return record

from __future__ import annotations

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE_LINES.append(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {title}"
                                + (f" -- {detail}" if detail else ""))
        print(ACCEPTANCE_LINES[-1])

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

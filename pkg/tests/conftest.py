from __future__ import annotations

import pytest

_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Collects one PASS/FAIL line per acceptance criterion for the summary."""

    def report(criterion: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        print(line)
        _LINES.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

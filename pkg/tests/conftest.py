from __future__ import annotations

import re
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

_ACCEPTANCE: dict[str, str] = {}
_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or "test_acceptance.py" not in report.nodeid:
        return
    key = f"{int(m.group(1)):02d} {m.group(2).replace('_', ' ')}"
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[key] = "PASS" if report.outcome == "passed" else report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        outcome = "PASS" if _ACCEPTANCE[key] == "PASS" else "FAIL"
        terminalreporter.write_line(f"criterion {key}: {outcome}")

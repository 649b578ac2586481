import os
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

import pytest

_criteria: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """``record(k, ok, detail)`` stores one acceptance verdict for the summary."""

    def record(k, ok: bool, detail: str) -> bool:
        _criteria[str(k)] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_criteria, key=lambda s: (int(s.split()[0]), s)):
        ok, detail = _criteria[k]
        terminalreporter.write_line(f"criterion {k:<7} {'PASS' if ok else 'FAIL'}  {detail}")

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(k, passed, detail)``; the test should then assert."""

    def record(k, passed, detail=""):
        _CRITERIA.setdefault(k, []).append((bool(passed), detail))
        print(f"criterion {k}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA, key=str):
        parts = _CRITERIA[k]
        ok = all(p for p, _ in parts)
        details = "; ".join(d for _, d in parts if d)
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {details}")

import time
from contextlib import contextmanager

import numpy as np
import pytest

from sttrack.geometry import GridConfig

# criterion number -> "PASS ..." / "FAIL ..." line, shown after the run
_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid():
    return GridConfig()


class _Outcome:
    detail = ""


@contextmanager
def _criterion(number: int, title: str):
    out = _Outcome()
    start = time.perf_counter()
    try:
        yield out
    except BaseException as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        _ACCEPTANCE[number] = f"FAIL {number} {title}: {msg} ({time.perf_counter() - start:.1f}s)"
        raise
    _ACCEPTANCE[number] = f"PASS {number} {title}: {out.detail} ({time.perf_counter() - start:.1f}s)"


@pytest.fixture
def criterion():
    """Context manager that records one PASS/FAIL line per acceptance criterion."""
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])

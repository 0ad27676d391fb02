import numpy as np
import pytest

from lce.tensor import default_dtype


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    """Run the test body with float64 tensor creation."""
    with default_dtype(np.float64):
        yield


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """``record(label, ok, detail)`` prints one PASS/FAIL line and returns ``ok``."""
    def record(label: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {label}: {detail}".rstrip()
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)

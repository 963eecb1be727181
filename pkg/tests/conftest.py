import os
from pathlib import Path

import numpy as np
import pytest

from partialmix.data import Dataset

GRB_CANDIDATES = [
    os.environ.get("PARTIALMIX_GRB_CSV", ""),
    str(Path(__file__).parent / "data" / "grb.csv"),
]


def grb_path():
    for c in GRB_CANDIDATES:
        if c and Path(c).is_file():
            return Path(c)
    return None


@pytest.fixture
def grb_csv():
    path = grb_path()
    if path is None:
        pytest.skip("GRB catalog not available; set PARTIALMIX_GRB_CSV or add tests/data/grb.csv")
    return path


@pytest.fixture
def small_missing():
    """Six rows, two features, one masked cell."""
    y = np.array([[0.1, 1.2], [1.5, 0.7], [-0.4, 0.3], [2.0, 2.2], [0.9, np.nan], [1.1, 1.9]])
    return Dataset.from_array(y)


_VERDICTS: dict[int, str] = {}


def record_verdict(number: int, ok: bool, detail: str) -> None:
    _VERDICTS[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_runtest_logreport(report):
    # skipped acceptance tests never reach record_verdict
    if report.when in ("setup", "call") and report.skipped and "test_acceptance.py::test_c" in report.nodeid:
        number = int(report.nodeid.split("::test_c")[1].split("_")[0])
        reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
        _VERDICTS[number] = f"criterion {number:>2}: SKIP  {reason}"


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[k])

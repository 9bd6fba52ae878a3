import os
from pathlib import Path

import pytest

from carlo.rng import RngStream

DATA_DIR = Path(os.environ.get("CARLO_DATA_DIR", "/root/data"))


@pytest.fixture
def stream():
    return RngStream(1, 0)


def data_file(name: str) -> Path:
    return DATA_DIR / name


def require_data(name: str):
    return pytest.mark.skipif(not data_file(name).is_file(), reason=f"{name} not found under {DATA_DIR}")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, title, text = results[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {text}")

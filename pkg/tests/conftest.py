"""Shared builders for small fleets used across the test suite."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import (  # noqa: E402
    ACCEPTANCE,
    lab_fleet_doc,
    lab_ofm,
    make_desc,
    make_world,
    rpi_ofm,
)


@pytest.fixture
def ofm():
    return lab_ofm()


@pytest.fixture
def rpi():
    return rpi_ofm()


@pytest.fixture
def fleet_doc():
    return lab_fleet_doc()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


__all__ = ["make_desc", "make_world"]

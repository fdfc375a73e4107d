"""Shared fixtures.

Critical-value tables for the acceptance run (and the CLI tests that need
real tables) are calibrated once, at 2e5 paths and step 5e-4, into
``.diffgof_cache/tables_n200000_dt5e-4`` at the repository root (override
with ``DIFFGOF_ACCEPT_TABLE_DIR``).  A fresh checkout pays the calibration
cost (a few minutes on one core) on the first run only.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from diffgof.calibrate import get_table, table_filename
from diffgof.law import build_law
from diffgof.model import ou_model, switching_model

ROOT = Path(__file__).resolve().parents[1]
ACCEPT_TABLE_DIR = Path(os.environ.get("DIFFGOF_ACCEPT_TABLE_DIR",
                                       ROOT / ".diffgof_cache" / "tables_n200000_dt5e-4"))
ACCEPT_TABLE_PARAMS = {"n_paths": 200_000, "time_step": 5e-4, "truncation_v": 35.0, "seed": 20240}
FUNCTIONAL_IDS = ("int_01", "int_exp", "sup_01", "sup_exp")

# criterion number -> (title, passed, detail); filled by the acceptance tests
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k} [{title}]: {'PASS' if ok else 'FAIL'} -- {detail}")


@pytest.fixture
def record_criterion(capsys):
    def record(number: int, title: str, ok: bool, detail: str):
        ACCEPTANCE[number] = (title, bool(ok), detail)
        with capsys.disabled():
            print(f"\ncriterion {number} [{title}]: {'PASS' if ok else 'FAIL'} -- {detail}")
    return record


@pytest.fixture(scope="session")
def ou():
    return ou_model()


@pytest.fixture(scope="session")
def sw():
    return switching_model()


@pytest.fixture(scope="session")
def ou_law(ou):
    return build_law(ou)


@pytest.fixture(scope="session")
def sw_law(sw):
    return build_law(sw)


@pytest.fixture(scope="session")
def accept_tables():
    """functional id -> (table, path) for the acceptance-grade tables."""
    ACCEPT_TABLE_DIR.mkdir(parents=True, exist_ok=True)
    out = {}
    for fid in FUNCTIONAL_IDS:
        table = get_table(fid, ACCEPT_TABLE_DIR, **ACCEPT_TABLE_PARAMS)
        out[fid] = (table, ACCEPT_TABLE_DIR / table_filename(fid))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

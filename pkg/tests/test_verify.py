import copy

import numpy as np
import pytest

from swirlshock.harness.verify import bundle_tables, load_tables, verify_tables, write_tables

from cases import solved


@pytest.fixture(scope="module")
def tables_meta():
    return bundle_tables(solved(1e-3, 32))


def test_all_checks_pass(tables_meta):
    rep = verify_tables(*tables_meta, level="full")
    assert rep["passed"], [k for k, c in rep["checks"].items() if not c["passed"]]
    assert "regularity" in rep


def test_unperturbed_passes():
    rep = verify_tables(*bundle_tables(solved(0.0, 32)))
    assert rep["passed"]


def test_corrupted_pressure_fails_interior_euler(tables_meta):
    tables, meta = copy.deepcopy(tables_meta)
    eul = tables["eulerian"]
    sub = np.asarray(eul["region"]) == 1
    eul["P"] = np.where(sub, np.asarray(eul["P"]) * 1.01 * (1 + 0.5 * np.asarray(eul["theta"])),
                        eul["P"])
    rep = verify_tables(tables, meta)
    assert not rep["checks"]["interior_euler"]["passed"]


def test_report_from_disk_equals_fresh(tables_meta, tmp_path):
    write_tables(tmp_path, *tables_meta)
    a = verify_tables(*tables_meta)
    b = verify_tables(*load_tables(tmp_path))
    assert a["passed"] == b["passed"]
    for k in a["checks"]:
        assert b["checks"][k]["value"] == pytest.approx(a["checks"][k]["value"], rel=1e-10, abs=1e-15)

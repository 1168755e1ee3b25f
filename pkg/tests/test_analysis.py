import json
from pathlib import Path

import jsonschema
import pytest

from gridrelax import analysis, matpower
from gridrelax.ac import sample_feasible_points
from gridrelax.analysis import (
    GapReport,
    compute_gaps,
    containment_violations,
    hierarchy_objectives,
    voltage_product_inequality_min,
    optimality_gap,
    rank1_defect,
    run_verification,
    th_negative_loss_branches,
)

SCHEMA = json.loads(
    (Path(__file__).resolve().parent.parent / "docs" / "gap_report.schema.json").read_text()
)


def test_gap_formula():
    assert optimality_gap(5812.0, 5812.0) == 0.0
    assert optimality_gap(100.0, 87.0) == pytest.approx(13.0)
    assert optimality_gap(5812.0, 5735.0) == pytest.approx(1.3249, abs=1e-3)


@pytest.fixture(scope="module")
def report():
    return compute_gaps(matpower.case3_base(), "case3_base", 5812.0)


class TestGapReport:

    def test_fixed_order(self, report):
        assert [r.kind for r in report.relaxations] == ["SOC", "NF", "CP", "TH"]

    def test_json_schema_and_roundtrip(self, report):
        payload = report.to_dict()
        jsonschema.validate(payload, SCHEMA)
        blob = json.dumps(payload)
        again = GapReport.from_dict(json.loads(blob))
        assert again == report

    def test_table_prints_two_decimal_gaps(self, report):
        lines = report.table().splitlines()
        soc_line = next(ln for ln in lines if ln.startswith("SOC"))
        gap_field = soc_line.split()[2]
        assert len(gap_field.split(".")[1]) == 2

    def test_provenance_recorded(self, report):
        assert report.provenance == "user-supplied"
        assert report.to_dict()["ac_reference"]["provenance"] == "user-supplied"


def test_voltage_product_inequality_min_nonnegative():
    assert voltage_product_inequality_min(samples=100_000, seed=0) >= -1e-10


def test_containment_and_rank1_on_samples():
    net = matpower.case3_base()
    pts = sample_feasible_points(net, 100, seed=2)
    worst = containment_violations(net, pts)
    assert set(worst) == {"SOC", "NF", "CP"}
    assert max(worst.values()) <= 1e-8
    assert rank1_defect(net, pts) <= 1e-12


def test_th_negative_loss_exhibit():
    hits = th_negative_loss_branches(matpower.case3_base())
    assert hits
    assert all(loss < -1e-6 for _, _, loss in hits)


def test_hierarchy_objectives_ordering():
    objs = hierarchy_objectives(matpower.case3_base())
    slack = 1e-6 * max(abs(v) for v in objs.values())
    assert objs["CP"] <= objs["NF"] + slack <= objs["SOC"] + 2 * slack


def test_run_verification_all_pass():
    outcomes = run_verification(matpower.case3_base(), samples=100, seed=0)
    names = [o.name for o in outcomes]
    assert names == [
        "containment SOC",
        "containment NF",
        "containment CP",
        "rank-1 tightness",
        "voltage-product inequality",
        "TH negative-loss exhibit",
    ]
    assert all(o.passed for o in outcomes), [o for o in outcomes if not o.passed]

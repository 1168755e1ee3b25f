"""Acceptance suite: one test per criterion, one printed verdict line each.

Run with `pytest tests/test_acceptance.py -v` for the per-criterion result
lines; printed PASS/FAIL verdicts also land in captured output.
"""

import random
import time
from dataclasses import replace
from functools import lru_cache

import pytest

from gridrelax import matpower
from gridrelax.ac import (
    OracleNoFeasible,
    check_feasibility,
    grid_oracle,
    sample_feasible_points,
)
from gridrelax.analysis import compute_gaps, containment_violations, voltage_product_inequality_min
from gridrelax.matpower import (
    DuplicateId,
    MalformedRow,
    MissingField,
    NoReference,
    UnsupportedCost,
    parse_case,
    serialize,
    to_network,
)
from gridrelax.network import Network
from gridrelax.relaxations import build_cp, build_nf, build_soc, build_th
from gridrelax.solver import solve
from tests.test_matpower import random_network

BASE_REF = 5812.0
TIGHT_REF = 5992.0


def verdict(num, description):
    """Print the criterion verdict line whatever the assert outcome."""

    def deco(fn):
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"ACCEPTANCE {num} FAIL  {description}")
                raise
            print(f"ACCEPTANCE {num} PASS  {description}")

        wrapper.__name__ = fn.__name__
        return wrapper

    return deco


@lru_cache(maxsize=None)
def oracle(case_name, resolution=21, rounds=3):
    net = matpower.load_fixture(case_name)
    t0 = time.perf_counter()
    pt, cost = grid_oracle(net, resolution=resolution, refine_rounds=rounds)
    return pt, cost, time.perf_counter() - t0


def gaps_for(case_name, reference):
    net = matpower.load_fixture(case_name)
    t0 = time.perf_counter()
    report = compute_gaps(net, case_name, reference)
    elapsed = time.perf_counter() - t0
    assert all(r.status == "optimal" for r in report.relaxations), report
    return {r.kind: r.gap_percent for r in report.relaxations}, elapsed


@verdict(1, "Table 2 base-case gaps (SOC 1.32, NF 2.99, CP 2.99 +/-0.1pp; TH 87.2 +/-1pp; <5s)")
def test_criterion_1_table2_base():
    gaps, elapsed = gaps_for("case3_base", BASE_REF)
    assert gaps["SOC"] == pytest.approx(1.32, abs=0.1)
    assert gaps["NF"] == pytest.approx(2.99, abs=0.1)
    assert gaps["CP"] == pytest.approx(2.99, abs=0.1)
    assert gaps["TH"] == pytest.approx(87.2, abs=1.0)
    assert elapsed < 5.0


@verdict(2, "Table 2 tight-case gaps (SOC 4.28, NF 5.90, CP 5.90 +/-0.1pp; TH 87.5 +/-1pp)")
def test_criterion_2_table2_tight():
    gaps, _ = gaps_for("case3_tight", TIGHT_REF)
    assert gaps["SOC"] == pytest.approx(4.28, abs=0.1)
    assert gaps["NF"] == pytest.approx(5.90, abs=0.1)
    assert gaps["CP"] == pytest.approx(5.90, abs=0.1)
    assert gaps["TH"] == pytest.approx(87.5, abs=1.0)


@verdict(3, "grid oracle within 1% of 5812 / 5992, feasible points, <2min")
def test_criterion_3_oracle_reproduction():
    total = 0.0
    for case_name, ref in (("case3_base", BASE_REF), ("case3_tight", TIGHT_REF)):
        pt, cost, elapsed = oracle(case_name)
        total += elapsed
        assert abs(cost - ref) / ref < 0.01, (case_name, cost)
        net = matpower.load_fixture(case_name)
        assert check_feasibility(net, pt, tol=1e-4).feasible
    assert total < 120.0, f"oracle runs took {total:.1f}s"


def perturbed_networks(seed):
    rng = random.Random(seed)
    base = matpower.case3_base()
    while True:
        buses = tuple(
            replace(b, pd=b.pd * rng.uniform(0.8, 1.2), qd=b.qd * rng.uniform(0.8, 1.2))
            for b in base.buses
        )
        branches = tuple(
            replace(br, r=br.r * rng.uniform(0.5, 2.0), x=br.x * rng.uniform(0.5, 2.0))
            for br in base.branches
        )
        yield Network(
            base_mva=base.base_mva,
            buses=buses,
            branches=branches,
            generators=base.generators,
            reference_bus=base.reference_bus,
        )


def oracle_with_ladder(net):
    for resolution in (9, 13, 17):
        try:
            return grid_oracle(net, resolution=resolution, refine_rounds=2)
        except OracleNoFeasible:
            continue
    raise OracleNoFeasible("no feasible point up to resolution 17")


def check_hierarchy(net, label, ac_cost):
    objs = {}
    for name, builder in (("CP", build_cp), ("NF", build_nf), ("SOC", build_soc)):
        res = solve(builder(net)[0])
        assert res.status == "optimal", (label, name, res.message)
        objs[name] = res.objective
    slack = 1e-6 * max(1.0, *(abs(v) for v in objs.values()))
    assert objs["CP"] <= objs["NF"] + slack, (label, objs)
    assert objs["NF"] <= objs["SOC"] + slack, (label, objs)
    for name in ("CP", "NF", "SOC"):
        assert objs[name] <= ac_cost + 1e-6 * abs(ac_cost), (label, name, objs, ac_cost)


@verdict(4, "hierarchy CP <= NF <= SOC <= AC on fixtures and 50 perturbations")
def test_criterion_4_hierarchy():
    for case_name in ("case3_base", "case3_tight"):
        _, ac_cost, _ = oracle(case_name)
        check_hierarchy(matpower.load_fixture(case_name), case_name, ac_cost)
    # a +20% demand draw can exceed what the thermally limited line can
    # import, so infeasible draws do not count toward the 50
    accepted, draws = 0, 0
    stream = perturbed_networks(seed=412)
    while accepted < 50:
        net = next(stream)
        draws += 1
        assert draws <= 200, "too many infeasible perturbation draws"
        try:
            _, ac_cost = oracle_with_ladder(net)
        except OracleNoFeasible:
            continue
        check_hierarchy(net, f"perturbation {draws}", ac_cost)
        accepted += 1


@verdict(5, "1000 lifted AC points per case satisfy all SOC/NF/CP rows within 1e-8")
def test_criterion_5_containment():
    for case_name in ("case3_base", "case3_tight"):
        net = matpower.load_fixture(case_name)
        points = sample_feasible_points(net, 1000, seed=77)
        assert len(points) == 1000
        points.append(oracle(case_name)[0])  # the grid-search point counts too
        worst = containment_violations(net, points)
        for kind, violation in worst.items():
            assert violation <= 1e-8, (case_name, kind, violation)


@verdict(6, "voltage-product inequality >= -1e-10 on 1e5 cone samples")
def test_criterion_6_voltage_product_inequality():
    assert voltage_product_inequality_min(samples=100_000, seed=0) >= -1e-10


@verdict(7, "TH optimum creates power on at least one line (loss < -1e-6)")
def test_criterion_7_th_exhibit():
    net = matpower.case3_base()
    m, vm = build_th(net)
    res = solve(m)
    assert res.status == "optimal"
    losses = [
        res.value(vm.p[(k, br.from_bus, br.to_bus)])
        + res.value(vm.p[(k, br.to_bus, br.from_bus)])
        for k, br in enumerate(net.branches)
    ]
    assert min(losses) < -1e-6, losses


@verdict(8, "serialize/parse round trip byte-identical; malformed inputs classified")
def test_criterion_8_roundtrip_and_errors():
    for name in ("case3_base", "case3_tight"):
        net = matpower.load_fixture(name)
        text1 = serialize(net)
        text2 = serialize(to_network(parse_case(text1)))
        assert text2 == text1, name
    rng = random.Random(881)
    for k in range(100):
        net = random_network(rng)
        text1 = serialize(net)
        text2 = serialize(to_network(parse_case(text1)))
        assert text2 == text1, f"random network {k}"

    with pytest.raises(MissingField):
        parse_case("mpc.bus = [\n1 3 0 0 0 0 1 1 0 0 1 1.1 0.9;\n];")
    with pytest.raises(MalformedRow) as err:
        parse_case("mpc.baseMVA = 100;\nmpc.branch = [\n1 2 0.01 0.1 0 0 0 0 0 0 1 -30;\n];")
    assert err.value.line == 3
    with pytest.raises(UnsupportedCost):
        parse_case("mpc.baseMVA = 100;\nmpc.gencost = [\n1 0 0 4 0 1 2 3;\n];")
    with pytest.raises(NoReference):
        to_network(parse_case(
            "mpc.baseMVA = 100;\nmpc.bus = [\n1 1 0 0 0 0 1 1 0 0 1 1.1 0.9;\n];"))
    with pytest.raises(DuplicateId):
        to_network(parse_case(
            "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 0 1 1.1 0.9;\n"
            "1 1 0 0 0 0 1 1 0 0 1 1.1 0.9;\n];"))


@verdict(9, "direct quadratic cost at the CP primal equals the reported 5639 +/- 1 $/h")
def test_criterion_9_epigraph_objective():
    net = matpower.case3_base()
    m, vm = build_cp(net)
    res = solve(m)
    assert res.status == "optimal"
    pg_mw = {k: net.base_mva * res.value(var) for k, var in vm.pg.items()}
    assert pg_mw[0] == pytest.approx(127.56, abs=0.1)
    assert pg_mw[1] == pytest.approx(187.44, abs=0.1)
    direct = sum(g.cost(pg_mw[k]) for k, g in enumerate(net.generators))
    assert direct == pytest.approx(res.objective, rel=1e-6)
    assert direct == pytest.approx(5639.0, abs=1.0)

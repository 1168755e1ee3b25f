import random

import pytest

from gridrelax import matpower
from gridrelax.ac import AcPoint, lift
from gridrelax.analysis import lifted_assignment
from gridrelax.network import Branch, Bus, Generator, Network
from gridrelax.optmodel import SENSE_EQ, SENSE_GE, SENSE_LE
from gridrelax.relaxations import (
    ModelUnsoundError,
    RelaxKind,
    build,
    build_cp,
    build_nf,
    build_soc,
    build_th,
    infer_flow_bounds,
    infer_w_bounds,
)
from gridrelax.solver import solve


def test_infer_w_bounds():
    assert infer_w_bounds(Bus(id=1, vmin=0.9, vmax=1.1)) == (0.81, 1.2100000000000002)
    assert infer_w_bounds(Bus(id=1, vmin=1.0, vmax=1.0)) == (1.0, 1.0)
    lo, hi = infer_w_bounds(Bus(id=1, vmin=0.95, vmax=1.05))
    assert (lo, hi) == pytest.approx((0.9025, 1.1025))


def test_infer_flow_bounds():
    net = matpower.case3_base()
    limited = net.branches[1]
    assert infer_flow_bounds(net, limited) == (-0.5, 0.5)
    unlimited = net.branches[0]
    assert infer_flow_bounds(net, unlimited) == pytest.approx((-5.9, 5.9))
    # an explicit 0 limit means "no data", same as absent
    zero = Branch(from_bus=1, to_bus=2, r=0.042, x=0.9, s_max=0.0)
    assert infer_flow_bounds(net, zero) == pytest.approx((-5.9, 5.9))


def rows_by_prefix(m, prefix):
    return [r for r in m.linear if r.tag.startswith(prefix)]


class TestCp:
    def test_active_row_reduces_to_total_generation(self):
        m, vm = build_cp(matpower.case3_base())
        (row,) = rows_by_prefix(m, "cp_balance_p")
        assert row.sense == SENSE_GE
        assert row.rhs == pytest.approx(3.15)
        # no shunts: only the three pg variables remain
        assert row.coefs == {vm.pg[k].index: 1.0 for k in range(3)}

    def test_degenerate_copper_plate(self):
        net = Network(
            base_mva=100.0,
            buses=(Bus(id=1, pd=1.0),),
            branches=(),
            generators=(Generator(bus=1, pmax=10.0, c2=0.02, c1=3.0, c0=5.0),),
            reference_bus=1,
        )
        m, _ = build_cp(net)
        res = solve(m)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(0.02 * 100**2 + 3.0 * 100 + 5.0, rel=1e-6)

    def test_charging_enters_reactive_row(self):
        m, vm = build_cp(matpower.case3_base())
        (row,) = rows_by_prefix(m, "cp_balance_q")
        # sum of qg + per-bus charging accumulation >= total reactive demand
        assert row.rhs == pytest.approx(1.3)
        w1 = vm.w[1].index
        # bus 1 touches lines 1-2 (0.3) and 1-3 (0.45): (0.3 + 0.45)/2
        assert row.coefs[w1] == pytest.approx(0.375)


class TestNf:
    def test_row_counts(self):
        m, _ = build_nf(matpower.case3_base())
        assert len(rows_by_prefix(m, "kcl_")) == 6
        assert len(rows_by_prefix(m, "nf_loss_")) == 6
        assert len(rows_by_prefix(m, "pad_")) == 6

    def test_chargeless_loss_rows(self):
        net = Network(
            base_mva=100.0,
            buses=(Bus(id=1), Bus(id=2, pd=0.2)),
            branches=(Branch(from_bus=1, to_bus=2, r=0.01, x=0.1, b_charge=0.0),),
            generators=(Generator(bus=1, pmax=5.0, c1=1.0),),
            reference_bus=1,
        )
        m, vm = build_nf(net)
        p_row = rows_by_prefix(m, "nf_loss_p")[0]
        q_row = rows_by_prefix(m, "nf_loss_q")[0]
        assert p_row.coefs == {vm.p[(0, 1, 2)].index: 1.0, vm.p[(0, 2, 1)].index: 1.0}
        assert q_row.coefs == {vm.q[(0, 1, 2)].index: 1.0, vm.q[(0, 2, 1)].index: 1.0}
        assert p_row.rhs == q_row.rhs == 0.0

    def test_matches_cp_on_three_bus(self):
        cp = solve(build_cp(matpower.case3_base())[0]).objective
        nf = solve(build_nf(matpower.case3_base())[0]).objective
        assert nf == pytest.approx(5639.0, abs=1.0)
        assert nf >= cp - 1e-6 * abs(cp)


def random_branch_net(rng):
    br = Branch(
        from_bus=1,
        to_bus=2,
        r=rng.uniform(0.0, 0.15),
        x=rng.uniform(0.05, 1.0),
        b_charge=rng.uniform(0.0, 0.8),
        tap=rng.uniform(0.9, 1.1),
        shift=rng.uniform(-0.2, 0.2),
    )
    return Network(
        base_mva=100.0,
        buses=(Bus(id=1), Bus(id=2)),
        branches=(br,),
        generators=(Generator(bus=1, pmax=5.0), Generator(bus=2, pmax=5.0)),
        reference_bus=1,
    )


class TestTh:
    def test_loss_equalities_hold_at_ac_points(self):
        # the two replacement rows are valid equalities: zero residual at
        # any lifted operating point, whatever the line parameters
        rng = random.Random(11)
        for _ in range(200):
            net = random_branch_net(rng)
            m, vm = build_th(net)
            pt = AcPoint(
                vm=(rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1)),
                va=(0.0, rng.uniform(-0.5, 0.5)),
                pg=(0.0, 0.0),
                qg=(0.0, 0.0),
            )
            values = lifted_assignment(net, m, vm, pt, lift(net, pt))
            for row in m.linear:
                if row.tag.startswith("th_loss_"):
                    assert row.violation(values) < 1e-12, row.tag

    def test_structure(self):
        m, _ = build_th(matpower.case3_base())
        assert len(rows_by_prefix(m, "th_loss_a")) == 3
        assert len(rows_by_prefix(m, "th_loss_b")) == 3
        assert not rows_by_prefix(m, "nf_loss_")
        assert all(r.sense == SENSE_EQ for r in rows_by_prefix(m, "th_loss_"))

    def test_objective_and_created_power(self):
        m, vm = build_th(matpower.case3_base())
        res = solve(m)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(743.0, abs=10.0)
        losses = [
            res.value(vm.p[(k, br.from_bus, br.to_bus)])
            + res.value(vm.p[(k, br.to_bus, br.from_bus)])
            for k, br in enumerate(matpower.case3_base().branches)
        ]
        assert min(losses) < -1e-6

    def test_zero_demand_single_branch(self):
        net = Network(
            base_mva=100.0,
            buses=(Bus(id=1), Bus(id=2)),
            branches=(Branch(from_bus=1, to_bus=2, r=0.01, x=0.1, b_charge=0.0),),
            generators=(Generator(bus=1, pmax=5.0, c2=0.1, c1=2.0),),
            reference_bus=1,
        )
        res = solve(build_th(net)[0])
        assert res.status == "optimal"
        assert res.objective == pytest.approx(0.0, abs=1e-6)


class TestSoc:
    def test_structure(self):
        net = matpower.case3_base()
        m, vm = build_soc(net)
        assert len(vm.wr) == len(net.branches)
        assert len(rows_by_prefix(m, "flow_")) == 12
        assert len(rows_by_prefix(m, "pad_")) == 6
        wprod = [c for c in m.cones if c.tag.startswith("wprod")]
        thermal = [c for c in m.cones if c.tag.startswith("thermal")]
        assert len(wprod) == 3
        assert len(thermal) == 2  # both directions of the one limited line

    def test_flow_rows_exact_at_lifted_points(self):
        rng = random.Random(13)
        for _ in range(200):
            net = random_branch_net(rng)
            m, vm = build_soc(net)
            pt = AcPoint(
                vm=(rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1)),
                va=(0.0, rng.uniform(-0.5, 0.5)),
                pg=(0.0, 0.0),
                qg=(0.0, 0.0),
            )
            values = lifted_assignment(net, m, vm, pt, lift(net, pt))
            for row in rows_by_prefix(m, "flow_"):
                assert row.violation(values) < 1e-12

    def test_objective_on_fixtures(self):
        assert solve(build_soc(matpower.case3_base())[0]).objective == pytest.approx(5735.0, abs=6.0)
        assert solve(build_soc(matpower.case3_tight())[0]).objective == pytest.approx(5735.5, abs=6.0)

    def test_lossless_line_matches_copper_plate(self):
        net = Network(
            base_mva=100.0,
            buses=(Bus(id=1), Bus(id=2, pd=0.5, qd=0.1)),
            branches=(Branch(from_bus=1, to_bus=2, r=0.0, x=0.1, b_charge=0.0),),
            generators=(Generator(bus=1, pmax=5.0, c2=0.05, c1=2.0),),
            reference_bus=1,
        )
        soc = solve(build_soc(net)[0]).objective
        cp = solve(build_cp(net)[0]).objective
        assert soc == pytest.approx(cp, rel=1e-6)


class TestPreconditions:
    def negative_impedance_net(self):
        return Network(
            base_mva=100.0,
            buses=(Bus(id=1), Bus(id=2, pd=0.1)),
            branches=(Branch(from_bus=1, to_bus=2, r=-0.01, x=0.1),),
            generators=(Generator(bus=1, pmax=5.0),),
            reference_bus=1,
        )

    def test_nf_cp_th_refuse_negative_impedance(self):
        net = self.negative_impedance_net()
        for builder in (build_nf, build_cp, build_th):
            with pytest.raises(ModelUnsoundError):
                builder(net)

    def test_soc_accepts_negative_impedance(self):
        m, _ = build_soc(self.negative_impedance_net())
        assert m.linear

    def test_invalid_network_refused_everywhere(self):
        net = Network(
            base_mva=100.0,
            buses=(Bus(id=1),),
            branches=(Branch(from_bus=1, to_bus=9, r=0.01, x=0.1),),
            generators=(),
            reference_bus=1,
        )
        for kind in RelaxKind:
            with pytest.raises(ModelUnsoundError):
                build(net, kind)


def test_dispatch_by_string():
    net = matpower.case3_base()
    for kind in ("soc", "NF", "cp", "TH"):
        m, _ = build(net, kind)
        assert m.name == kind.lower()


def test_clean_validation_implies_every_builder_accepts():
    from gridrelax.network import validate

    for net in (matpower.case3_base(), matpower.case3_tight()):
        assert validate(net) == []
        for kind in RelaxKind:
            m, _ = build(net, kind)
            assert m.variables


def test_hierarchy_on_fixtures():
    for net in (matpower.case3_base(), matpower.case3_tight()):
        cp = solve(build_cp(net)[0]).objective
        nf = solve(build_nf(net)[0]).objective
        soc = solve(build_soc(net)[0]).objective
        slack = 1e-6 * max(abs(cp), abs(nf), abs(soc))
        assert cp <= nf + slack
        assert nf <= soc + slack

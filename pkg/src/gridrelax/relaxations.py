"""Convex relaxation builders for the extended AC power flow problem.

Four models are built over a validated Network, all sharing the same
quadratic-cost objective and lifted squared-voltage variables w:

* SOC - the second-order-cone relaxation in W-space: per-branch voltage
  product variables (wr, wi), exact linear flow-definition rows, the
  rotated cone wr^2 + wi^2 <= w_i * w_j, thermal cones, and PAD rows.
* NF  - the linear network-flow relaxation: keeps KCL and flow boxes,
  replaces the flow definitions with per-branch nonnegative-loss rows,
  states PAD through a linearization in (w, p, q); no thermal cone.
* CP  - the copper-plate relaxation: one aggregated active and one
  aggregated reactive balance inequality; no flow variables at all.
* TH  - a comparison model: NF with the two loss inequalities replaced by
  two loss/transfer equalities.  Not contained in the hierarchy; it can
  create power on lines.

NF, CP, and TH are only valid lower bounds when every branch has r >= 0
and x >= 0; their builders refuse networks that violate this.  The real
coordinate expansions used throughout take the complex branch constants
from network.branch_constants.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field

from .network import (
    NONNEGATIVE_IMPEDANCE_VIOLATED,
    Branch,
    Bus,
    Network,
    branch_constants,
    errors,
    validate,
    warnings_of,
)
from .optmodel import (
    ROTATED,
    SECOND_ORDER,
    SENSE_EQ,
    SENSE_GE,
    SENSE_LE,
    LinExpr,
    OptModel,
    add_quadratic_cost_epigraph,
)


class RelaxKind(enum.Enum):
    SOC = "soc"
    NF = "nf"
    CP = "cp"
    TH = "th"


class ModelUnsoundError(ValueError):
    """Network fails the preconditions of the requested relaxation."""

    code = "MODEL_UNSOUND"


@dataclass
class VarMap:
    """Variable handles of a built model, keyed by network element.

    pg/qg by generator position, w by bus id, p/q by directed arc
    (branch index, tail, head), wr/wi by branch index (SOC only),
    cost_epi by generator position (only generators with c2 > 0).
    """

    pg: dict = field(default_factory=dict)
    qg: dict = field(default_factory=dict)
    w: dict = field(default_factory=dict)
    p: dict = field(default_factory=dict)
    q: dict = field(default_factory=dict)
    wr: dict = field(default_factory=dict)
    wi: dict = field(default_factory=dict)
    cost_epi: dict = field(default_factory=dict)


def infer_w_bounds(bus: Bus) -> tuple[float, float]:
    """Box for the squared voltage magnitude variable."""
    return bus.vmin**2, bus.vmax**2


def infer_flow_bounds(net: Network, br: Branch) -> tuple[float, float]:
    """Box valid for each of p_ij, q_ij, p_ji, q_ji on a branch.

    The thermal limit bounds each power component directly; without one
    (s_max absent or 0) the conservative network-wide fallback applies.
    """
    bound = br.s_max if br.s_max else net.fallback_flow_bound()
    return -bound, bound


def _check_preconditions(net: Network, kind: RelaxKind):
    diags = validate(net)
    bad = errors(diags)
    if bad:
        raise ModelUnsoundError(
            f"cannot build {kind.value}: network invalid: {bad[0]}"
        )
    if kind is not RelaxKind.SOC:
        neg = warnings_of(diags, NONNEGATIVE_IMPEDANCE_VIOLATED)
        if neg:
            raise ModelUnsoundError(
                f"cannot build {kind.value}: {neg[0].message}"
            )


def _add_gen_vars(m: OptModel, net: Network, vm: VarMap):
    scale = net.base_mva
    for k, g in enumerate(net.generators):
        pg = m.add_var(f"pg[{k}@{g.bus}]", g.pmin, g.pmax)
        qg = m.add_var(f"qg[{k}@{g.bus}]", g.qmin, g.qmax)
        vm.pg[k], vm.qg[k] = pg, qg
        before = len(m.variables)
        m.add_objective(add_quadratic_cost_epigraph(m, pg, g.c2, g.c1, g.c0, scale))
        if len(m.variables) > before:
            vm.cost_epi[k] = m.variables[before]


def _add_w_vars(m: OptModel, net: Network, vm: VarMap):
    for bus in net.buses:
        lo, hi = infer_w_bounds(bus)
        vm.w[bus.id] = m.add_var(f"w[{bus.id}]", lo, hi)


def _add_flow_vars(m: OptModel, net: Network, vm: VarMap):
    for k, br in enumerate(net.branches):
        lo, hi = infer_flow_bounds(net, br)
        for tail, head in ((br.from_bus, br.to_bus), (br.to_bus, br.from_bus)):
            arc = (k, tail, head)
            vm.p[arc] = m.add_var(f"p[{k}:{tail},{head}]", lo, hi)
            vm.q[arc] = m.add_var(f"q[{k}:{tail},{head}]", lo, hi)


def _add_kcl_rows(m: OptModel, net: Network, vm: VarMap):
    arcs_at = defaultdict(list)
    for arc in net.arcs():
        arcs_at[arc[1]].append(arc)
    for bus in net.buses:
        cp: dict[int, float] = defaultdict(float)
        cq: dict[int, float] = defaultdict(float)
        for k in net.gens_at(bus.id):
            cp[vm.pg[k].index] += 1.0
            cq[vm.qg[k].index] += 1.0
        cp[vm.w[bus.id].index] -= bus.gs
        cq[vm.w[bus.id].index] += bus.bs
        for arc in arcs_at[bus.id]:
            cp[vm.p[arc].index] -= 1.0
            cq[vm.q[arc].index] -= 1.0
        for coefs, rhs, tag in ((cp, bus.pd, f"kcl_p[{bus.id}]"),
                                (cq, bus.qd, f"kcl_q[{bus.id}]")):
            if not any(c != 0.0 for c in coefs.values()):
                if rhs != 0.0:
                    raise ModelUnsoundError(
                        f"bus {bus.id} has demand but no generator, shunt, or line"
                    )
                continue
            m.add_linear(coefs, SENSE_EQ, rhs, tag)


def _charging_coefs(net: Network, vm: VarMap):
    """w coefficients of the total charging injection sum((bc/2)(w_i/t^2 + w_j))."""
    coefs: dict[int, float] = defaultdict(float)
    for br in net.branches:
        half = br.b_charge / 2.0
        coefs[vm.w[br.from_bus].index] += half / br.tap**2
        coefs[vm.w[br.to_bus].index] += half
    return coefs


def _add_pad_rows_flow(m: OptModel, net: Network, vm: VarMap):
    # PAD on the from orientation, written in (w, p, q) through the
    # tz shorthand expansion of the voltage product
    for k, br in enumerate(net.branches):
        bc = branch_constants(br)
        i, j = br.from_bus, br.to_bus
        t2 = br.tap**2
        half = br.b_charge / 2.0
        re = {
            vm.w[i].index: (bc.tR - bc.tzI * half) / t2,
            vm.p[(k, i, j)].index: -bc.tzR,
            vm.q[(k, i, j)].index: -bc.tzI,
        }
        im = {
            vm.w[i].index: (-bc.tI - bc.tzR * half) / t2,
            vm.p[(k, i, j)].index: bc.tzI,
            vm.q[(k, i, j)].index: -bc.tzR,
        }
        for bound, sense, tag in (
            (br.angle_min, SENSE_GE, f"pad_lb[{i},{j}]"),
            (br.angle_max, SENSE_LE, f"pad_ub[{i},{j}]"),
        ):
            tn = math.tan(bound)
            coefs = {idx: im.get(idx, 0.0) - tn * re.get(idx, 0.0) for idx in set(im) | set(re)}
            m.add_linear(coefs, sense, 0.0, tag)


def _add_pad_rows_w(m: OptModel, net: Network, vm: VarMap):
    for k, br in enumerate(net.branches):
        i, j = br.from_bus, br.to_bus
        wr, wi = vm.wr[k], vm.wi[k]
        m.add_linear({wi.index: 1.0, wr.index: -math.tan(br.angle_min)},
                     SENSE_GE, 0.0, f"pad_lb[{i},{j}]")
        m.add_linear({wi.index: 1.0, wr.index: -math.tan(br.angle_max)},
                     SENSE_LE, 0.0, f"pad_ub[{i},{j}]")


def build_cp(net: Network) -> tuple[OptModel, VarMap]:
    """Copper-plate relaxation: aggregated supply-vs-demand inequalities."""
    _check_preconditions(net, RelaxKind.CP)
    m, vm = OptModel("cp"), VarMap()
    _add_gen_vars(m, net, vm)
    _add_w_vars(m, net, vm)

    cp: dict[int, float] = defaultdict(float)
    cq: dict[int, float] = defaultdict(float)
    for k in vm.pg:
        cp[vm.pg[k].index] += 1.0
        cq[vm.qg[k].index] += 1.0
    for bus in net.buses:
        cp[vm.w[bus.id].index] -= bus.gs
        cq[vm.w[bus.id].index] += bus.bs
    for idx, c in _charging_coefs(net, vm).items():
        cq[idx] += c
    pd = sum(b.pd for b in net.buses)
    qd = sum(b.qd for b in net.buses)
    for coefs, rhs, tag in ((cp, pd, "cp_balance_p"), (cq, qd, "cp_balance_q")):
        if not any(c != 0.0 for c in coefs.values()):
            if rhs > 0.0:
                raise ModelUnsoundError("network has demand but nothing to supply it")
            continue
        m.add_linear(coefs, SENSE_GE, rhs, tag)
    return m, vm


def build_nf(net: Network) -> tuple[OptModel, VarMap]:
    """Network-flow relaxation: KCL, nonnegative line losses, linear PAD."""
    _check_preconditions(net, RelaxKind.NF)
    m, vm = OptModel("nf"), VarMap()
    _add_gen_vars(m, net, vm)
    _add_w_vars(m, net, vm)
    _add_flow_vars(m, net, vm)
    _add_kcl_rows(m, net, vm)
    for k, br in enumerate(net.branches):
        i, j = br.from_bus, br.to_bus
        half = br.b_charge / 2.0
        m.add_linear(
            {vm.p[(k, i, j)].index: 1.0, vm.p[(k, j, i)].index: 1.0},
            SENSE_GE, 0.0, f"nf_loss_p[{i},{j}]",
        )
        m.add_linear(
            {
                vm.q[(k, i, j)].index: 1.0,
                vm.q[(k, j, i)].index: 1.0,
                vm.w[i].index: half / br.tap**2,
                vm.w[j].index: half,
            },
            SENSE_GE, 0.0, f"nf_loss_q[{i},{j}]",
        )
    _add_pad_rows_flow(m, net, vm)
    return m, vm


# Flow box, per unit, applied to the oriented flow pair of a branch that
# carries no thermal limit in the TH comparison model.  TH can create power
# on lines, so its optimum is only finite with finite flow boxes; the
# comparison figures asserted by the test suite are pinned to this default
# (700 MVA on a 100 MVA base, about twice the fixtures' total demand).
TH_FALLBACK_FLOW_BOUND = 7.0


def build_th(net: Network, fallback_bound: float = TH_FALLBACK_FLOW_BOUND) -> tuple[OptModel, VarMap]:
    """Comparison model: NF with loss inequalities swapped for the two
    loss/transfer equalities of the alternative linear relaxation.

    That model carries one oriented flow pair per line, so the thermal box
    binds (p_ij, q_ij) only; the reverse-orientation variables of this
    chassis are free.  Unlimited lines get the ``fallback_bound`` box.
    """
    _check_preconditions(net, RelaxKind.TH)
    m, vm = OptModel("th"), VarMap()
    _add_gen_vars(m, net, vm)
    _add_w_vars(m, net, vm)
    for k, br in enumerate(net.branches):
        lo, hi = (-br.s_max, br.s_max) if br.s_max else (-fallback_bound, fallback_bound)
        fwd = (k, br.from_bus, br.to_bus)
        rev = (k, br.to_bus, br.from_bus)
        vm.p[fwd] = m.add_var(f"p[{k}:{br.from_bus},{br.to_bus}]", lo, hi)
        vm.q[fwd] = m.add_var(f"q[{k}:{br.from_bus},{br.to_bus}]", lo, hi)
        vm.p[rev] = m.add_var(f"p[{k}:{br.to_bus},{br.from_bus}]")
        vm.q[rev] = m.add_var(f"q[{k}:{br.to_bus},{br.from_bus}]")
    _add_kcl_rows(m, net, vm)
    for k, br in enumerate(net.branches):
        bc = branch_constants(br)
        i, j = br.from_bus, br.to_bus
        t2 = br.tap**2
        half = br.b_charge / 2.0
        pf, pt = vm.p[(k, i, j)].index, vm.p[(k, j, i)].index
        qf, qt = vm.q[(k, i, j)].index, vm.q[(k, j, i)].index
        wi_, wj_ = vm.w[i].index, vm.w[j].index
        # Re((b - jg)(S_ij + S_ji)) = -g(bc/2)(w_i/t^2 + w_j); this sign of
        # the g term is the one that holds identically at AC points
        m.add_linear(
            {pf: bc.b, pt: bc.b, qf: bc.g, qt: bc.g,
             wi_: bc.g * half / t2, wj_: bc.g * half},
            SENSE_EQ, 0.0, f"th_loss_a[{i},{j}]",
        )
        # Re(Y(S_ij - S_ji)) = (|Y|^2 + b*bc/2)(w_i/t^2 - w_j)
        k2 = bc.g**2 + bc.b**2 + bc.b * half
        m.add_linear(
            {pf: bc.g, pt: -bc.g, qf: -bc.b, qt: bc.b,
             wi_: -k2 / t2, wj_: k2},
            SENSE_EQ, 0.0, f"th_loss_b[{i},{j}]",
        )
    _add_pad_rows_flow(m, net, vm)
    return m, vm


def build_soc(net: Network) -> tuple[OptModel, VarMap]:
    """Second-order-cone relaxation in lifted W-space."""
    _check_preconditions(net, RelaxKind.SOC)
    m, vm = OptModel("soc"), VarMap()
    _add_gen_vars(m, net, vm)
    _add_w_vars(m, net, vm)
    _add_flow_vars(m, net, vm)
    for k, br in enumerate(net.branches):
        vm.wr[k] = m.add_var(f"wr[{k}:{br.from_bus},{br.to_bus}]")
        vm.wi[k] = m.add_var(f"wi[{k}:{br.from_bus},{br.to_bus}]")
    _add_kcl_rows(m, net, vm)
    for k, br in enumerate(net.branches):
        bc = branch_constants(br)
        i, j = br.from_bus, br.to_bus
        t2 = br.tap**2
        yc = bc.y.conjugate()
        shunt = yc - 0.5j * br.b_charge
        cf = shunt / t2          # S_ij = cf*w_i - bf*W_ij
        bf = yc * bc.t / t2
        ct = shunt               # S_ji = ct*w_j - bt*conj(W_ij)
        bt = yc * bc.t.conjugate() / t2
        wi_, wj_ = vm.w[i].index, vm.w[j].index
        wr, wi = vm.wr[k].index, vm.wi[k].index
        m.add_linear(
            {vm.p[(k, i, j)].index: 1.0, wi_: -cf.real, wr: bf.real, wi: -bf.imag},
            SENSE_EQ, 0.0, f"flow_p[{i},{j}]",
        )
        m.add_linear(
            {vm.q[(k, i, j)].index: 1.0, wi_: -cf.imag, wr: bf.imag, wi: bf.real},
            SENSE_EQ, 0.0, f"flow_q[{i},{j}]",
        )
        m.add_linear(
            {vm.p[(k, j, i)].index: 1.0, wj_: -ct.real, wr: bt.real, wi: bt.imag},
            SENSE_EQ, 0.0, f"flow_p[{j},{i}]",
        )
        m.add_linear(
            {vm.q[(k, j, i)].index: 1.0, wj_: -ct.imag, wr: bt.imag, wi: -bt.real},
            SENSE_EQ, 0.0, f"flow_q[{j},{i}]",
        )
        m.add_cone(
            ROTATED,
            [LinExpr({wi_: 1.0}), LinExpr({wj_: 0.5}),
             LinExpr({wr: 1.0}), LinExpr({wi: 1.0})],
            tag=f"wprod[{i},{j}]",
        )
        if br.s_max:
            for tail, head in ((i, j), (j, i)):
                m.add_cone(
                    SECOND_ORDER,
                    [LinExpr(const=br.s_max),
                     LinExpr({vm.p[(k, tail, head)].index: 1.0}),
                     LinExpr({vm.q[(k, tail, head)].index: 1.0})],
                    tag=f"thermal[{tail},{head}]",
                )
    _add_pad_rows_w(m, net, vm)
    return m, vm


_BUILDERS = {
    RelaxKind.SOC: build_soc,
    RelaxKind.NF: build_nf,
    RelaxKind.CP: build_cp,
    RelaxKind.TH: build_th,
}


def build(net: Network, kind: RelaxKind | str) -> tuple[OptModel, VarMap]:
    if isinstance(kind, str):
        kind = RelaxKind(kind.lower())
    return _BUILDERS[kind](net)

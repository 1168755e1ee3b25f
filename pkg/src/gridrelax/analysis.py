"""Gap certification and numerical verification of the relaxation theory.

Covers the executable statements behind the model hierarchy: optimality
gaps against an AC reference, containment of lifted AC points in every
relaxation's rows, rank-1 tightness of the lift, the voltage-product
inequality behind the nonnegative-loss argument, and the negative-loss
exhibit for the TH comparison model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ac import AcPoint, WPoint, lift, sample_feasible_points
from .network import Network
from .optmodel import OptModel
from .relaxations import RelaxKind, VarMap, build
from .solver import SolveOptions, solve

GAP_ORDER = (RelaxKind.SOC, RelaxKind.NF, RelaxKind.CP, RelaxKind.TH)

USER_SUPPLIED = "user-supplied"
ORACLE = "oracle"


def optimality_gap(ac_reference: float, objective: float) -> float:
    """(reference - bound) / reference, in percent; smaller is tighter."""
    return (ac_reference - objective) / ac_reference * 100.0


@dataclass
class RelaxationRow:
    kind: str
    objective: float
    gap_percent: float
    status: str
    solve_time: float


@dataclass
class GapReport:
    case: str
    ac_reference: float
    provenance: str  # USER_SUPPLIED or ORACLE
    relaxations: list  # RelaxationRow, fixed order SOC, NF, CP, TH

    def to_dict(self) -> dict:
        def num(x):  # JSON has no NaN/inf; failed solves carry null
            return x if math.isfinite(x) else None

        return {
            "case": self.case,
            "ac_reference": {
                "dollars_per_hour": self.ac_reference,
                "provenance": self.provenance,
            },
            "relaxations": [
                {
                    "kind": r.kind,
                    "objective_dollars_per_hour": num(r.objective),
                    "gap_percent": num(r.gap_percent),
                    "status": r.status,
                    "solve_time_seconds": r.solve_time,
                }
                for r in self.relaxations
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GapReport":
        def num(x):
            return math.nan if x is None else x

        return cls(
            case=d["case"],
            ac_reference=d["ac_reference"]["dollars_per_hour"],
            provenance=d["ac_reference"]["provenance"],
            relaxations=[
                RelaxationRow(
                    kind=r["kind"],
                    objective=num(r["objective_dollars_per_hour"]),
                    gap_percent=num(r["gap_percent"]),
                    status=r["status"],
                    solve_time=r["solve_time_seconds"],
                )
                for r in d["relaxations"]
            ],
        )

    def table(self) -> str:
        lines = [
            f"case {self.case}  (AC reference {self.ac_reference:.4f} $/h, {self.provenance})",
            f"{'relaxation':<12}{'objective ($/h)':>18}{'gap (%)':>10}{'status':>18}{'time (s)':>10}",
        ]
        for r in self.relaxations:
            gap = round(r.gap_percent, 2) + 0.0  # avoid printing -0.00
            lines.append(
                f"{r.kind:<12}{r.objective:>18.4f}{gap:>10.2f}"
                f"{r.status:>18}{r.solve_time:>10.3f}"
            )
        return "\n".join(lines)


def compute_gaps(
    net: Network,
    case_name: str,
    ac_reference: float,
    provenance: str = USER_SUPPLIED,
    options: SolveOptions | None = None,
) -> GapReport:
    """Solve all four relaxations and report gaps against the reference."""
    rows = []
    for kind in GAP_ORDER:
        m, _ = build(net, kind)
        res = solve(m, options)
        gap = optimality_gap(ac_reference, res.objective) if res.status == "optimal" else math.nan
        rows.append(
            RelaxationRow(
                kind=kind.name,
                objective=res.objective,
                gap_percent=gap,
                status=res.status,
                solve_time=res.solve_time,
            )
        )
    return GapReport(case=case_name, ac_reference=ac_reference,
                     provenance=provenance, relaxations=rows)


def lifted_assignment(net: Network, m: OptModel, vm: VarMap, pt: AcPoint, wp: WPoint) -> dict:
    """Model variable values at the lift of an AC point.

    Cost epigraph variables take their exact values c2*(base*pg)^2, which
    satisfies their cones with equality.
    """
    idx = net.bus_index()
    values = {}
    for k, var in vm.pg.items():
        values[var.index] = pt.pg[k]
    for k, var in vm.qg.items():
        values[var.index] = pt.qg[k]
    for bus_id, var in vm.w.items():
        values[var.index] = wp.w[idx[bus_id]]
    for arc, var in vm.p.items():
        values[var.index] = wp.p[arc]
    for arc, var in vm.q.items():
        values[var.index] = wp.q[arc]
    for k, var in vm.wr.items():
        values[var.index] = wp.wr[k]
    for k, var in vm.wi.items():
        values[var.index] = wp.wi[k]
    for k, var in vm.cost_epi.items():
        g = net.generators[k]
        values[var.index] = g.c2 * (net.base_mva * pt.pg[k]) ** 2
    return values


def containment_violations(net: Network, points: list) -> dict:
    """Worst violation of any SOC/NF/CP constraint row over lifted points.

    The containment theorems say these must all be (numerically) zero for
    AC-feasible points; TH is excluded since it is not a superset model.
    """
    out = {}
    for kind in (RelaxKind.SOC, RelaxKind.NF, RelaxKind.CP):
        m, vmap = build(net, kind)
        worst = 0.0
        for pt in points:
            wp = lift(net, pt)
            values = lifted_assignment(net, m, vmap, pt, wp)
            worst = max(worst, m.max_row_violation(values))
        out[kind.name] = worst
    return out


def rank1_defect(net: Network, points: list) -> float:
    """Worst |wr^2 + wi^2 - w_i*w_j| over lifted points (0 at exact lifts)."""
    idx = net.bus_index()
    worst = 0.0
    for pt in points:
        wp = lift(net, pt)
        for k, br in enumerate(net.branches):
            wi_, wj_ = wp.w[idx[br.from_bus]], wp.w[idx[br.to_bus]]
            worst = max(worst, abs(wp.wr[k] ** 2 + wp.wi[k] ** 2 - wi_ * wj_))
    return worst


def voltage_product_inequality_min(samples: int = 100_000, seed: int = 0) -> float:
    """Minimum of the real expansion of W_i/|T|^2 - W_ij/T* - W*_ij/T + W_j
    over random points satisfying the voltage-product cone.

    Nonnegativity of this quantity is what makes the nonnegative-loss rows
    valid; the sampled minimum should be >= -1e-10.
    """
    rng = np.random.default_rng(seed)
    w_i = rng.uniform(0.2, 2.0, samples)
    w_j = rng.uniform(0.2, 2.0, samples)
    radius = np.sqrt(rng.uniform(0.0, 1.0, samples) * w_i * w_j)
    phi = rng.uniform(-np.pi, np.pi, samples)
    wr = radius * np.cos(phi)
    wi = radius * np.sin(phi)
    tap = rng.uniform(0.8, 1.25, samples)
    shift = rng.uniform(-0.4, 0.4, samples)
    t = tap * np.exp(1j * shift)
    w_ij = wr + 1j * wi
    # W_ij/T* + conj(W_ij)/T = 2 Re(W_ij/T*)
    val = w_i / tap**2 - 2.0 * (w_ij / np.conj(t)).real + w_j
    return float(val.min())


def th_negative_loss_branches(
    net: Network, options: SolveOptions | None = None, threshold: float = -1e-6
) -> list:
    """Branches whose total active loss is below threshold at the TH optimum.

    A nonempty result exhibits the comparison model creating power on lines
    (the relaxations of the hierarchy cannot do this).
    """
    m, vmap = build(net, RelaxKind.TH)
    res = solve(m, options)
    if res.status != "optimal":
        raise RuntimeError(f"TH solve failed: {res.status} {res.message}")
    out = []
    for k, br in enumerate(net.branches):
        loss = res.value(vmap.p[(k, br.from_bus, br.to_bus)]) + res.value(
            vmap.p[(k, br.to_bus, br.from_bus)]
        )
        if loss < threshold:
            out.append((br.from_bus, br.to_bus, loss))
    return out


def hierarchy_objectives(net: Network, options: SolveOptions | None = None) -> dict:
    """Objectives of CP, NF, SOC (the provable chain, weakest first)."""
    out = {}
    for kind in (RelaxKind.CP, RelaxKind.NF, RelaxKind.SOC):
        m, _ = build(net, kind)
        res = solve(m, options)
        if res.status != "optimal":
            raise RuntimeError(f"{kind.name} solve failed: {res.status} {res.message}")
        out[kind.name] = res.objective
    return out


@dataclass
class VerifyOutcome:
    name: str
    passed: bool
    detail: str


def run_verification(net: Network, samples: int = 1000, seed: int = 0) -> list:
    """The full verification suite on one network; list of VerifyOutcome."""
    outcomes = []
    points = sample_feasible_points(net, samples, seed=seed)

    cont = containment_violations(net, points)
    for kind in ("SOC", "NF", "CP"):
        v = cont[kind]
        outcomes.append(
            VerifyOutcome(
                name=f"containment {kind}",
                passed=v <= 1e-8,
                detail=f"max row violation {v:.3e} over {len(points)} lifted points",
            )
        )

    defect = rank1_defect(net, points)
    outcomes.append(
        VerifyOutcome(
            name="rank-1 tightness",
            passed=defect <= 1e-10,
            detail=f"max |wr^2+wi^2 - w_i*w_j| = {defect:.3e}",
        )
    )

    lo = voltage_product_inequality_min(samples=100_000, seed=seed)
    outcomes.append(
        VerifyOutcome(
            name="voltage-product inequality",
            passed=lo >= -1e-10,
            detail=f"sampled minimum {lo:.3e} over 100000 cone points",
        )
    )

    if net.branches:
        negative = th_negative_loss_branches(net)
        detail = ", ".join(f"{i}-{j}: {loss:.4f} pu" for i, j, loss in negative) or "none"
        outcomes.append(
            VerifyOutcome(
                name="TH negative-loss exhibit",
                passed=bool(negative),
                detail=f"branches with created power: {detail}",
            )
        )
    return outcomes

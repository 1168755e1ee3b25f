"""Conic solve backend (linear rows + second-order cones, minimization).

Models are translated to the standard cone-LP form

    minimize c'x  s.t.  Gx + s = h, s in K,  Ax = b

with K a product of a nonnegative orthant and second-order cones, and
handed to cvxopt's interior-point solver.  Rotated cones are lowered to
plain second-order cones here, and fixed variables (lower == upper) become
equality rows so the inequality block keeps a nonempty interior.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

from cvxopt import matrix, solvers, spmatrix

from .optmodel import (
    ROTATED,
    SECOND_ORDER,
    SENSE_GE,
    SENSE_LE,
    OptModel,
    VarRef,
)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERIC_FAILURE = "numeric_failure"


@dataclass
class SolveOptions:
    feastol: float = 1e-8
    abstol: float = 1e-8
    reltol: float = 1e-8
    maxiters: int = 200
    report_tol: float = 1e-6  # max row violation tolerated in an optimal result


@dataclass
class SolveResult:
    status: str
    objective: float
    primal: dict  # variable index -> value
    solve_time: float
    message: str = ""
    max_violation: float = 0.0

    def value(self, var: VarRef) -> float:
        return self.primal[var.index]


class _Assembler:
    """Collects the l-block, q-blocks, and equality rows of a model."""

    def __init__(self, n):
        self.n = n
        self.gv, self.gi, self.gj, self.h = [], [], [], []
        self.av, self.ai, self.aj, self.b = [], [], [], []
        self.qdims = []
        self.touched = [False] * n

    def ineq(self, coefs, rhs):
        r = len(self.h)
        for j, c in coefs.items():
            self.gv.append(c)
            self.gi.append(r)
            self.gj.append(j)
            self.touched[j] = True
        self.h.append(rhs)

    def eq(self, coefs, rhs):
        r = len(self.b)
        for j, c in coefs.items():
            self.av.append(c)
            self.ai.append(r)
            self.aj.append(j)
            self.touched[j] = True
        self.b.append(rhs)

    def soc_block(self, members):
        # one row per member: s_k = const_k + coef_k.x, i.e. G row -coef, h const
        for e in members:
            r = len(self.h)
            for j, c in e.coefs.items():
                self.gv.append(-c)
                self.gi.append(r)
                self.gj.append(j)
                self.touched[j] = True
            self.h.append(e.const)
        self.qdims.append(len(members))


def _rotated_to_soc(members):
    u, v, rest = members[0], members[1], members[2:]
    head = _combine(u, v, 1.0)
    diff = _combine(u, v, -1.0)
    scaled = []
    for e in rest:
        s = type(e)({i: math.sqrt(2.0) * c for i, c in e.coefs.items()},
                    math.sqrt(2.0) * e.const)
        scaled.append(s)
    return [head, diff] + scaled


def _combine(a, b, sign):
    out = type(a)(dict(a.coefs), a.const + sign * b.const)
    for i, c in b.coefs.items():
        out.coefs[i] = out.coefs.get(i, 0.0) + sign * c
    return out


def _polish_epigraphs(m: OptModel, primal: dict):
    """Absorb rotated-cone residuals into head variables that appear nowhere
    else.  Cost epigraphs live at the objective's dollar scale, where the
    interior-point residual can exceed the per-unit feasibility tolerance;
    raising the head restores exact cone feasibility and only moves the
    objective by the (tiny) residual."""
    used_in_linear = set()
    for row in m.linear:
        used_in_linear.update(row.coefs)
    cone_uses: dict[int, int] = {}
    for cone in m.cones:
        for e in cone.members:
            for j in e.coefs:
                cone_uses[j] = cone_uses.get(j, 0) + 1
    for cone in m.cones:
        if cone.kind != ROTATED or len(cone.members) < 2:
            continue
        head = cone.members[0]
        if len(head.coefs) != 1 or head.const != 0.0:
            continue
        ((j, cj),) = head.coefs.items()
        if cj <= 0.0 or j in used_in_linear or cone_uses.get(j) != 1:
            continue
        if m.objective.coefs.get(j, 0.0) < 0.0:
            continue
        m2 = cone.members[1].evaluate(primal)
        if m2 <= 0.0:
            continue
        need = sum(e.evaluate(primal) ** 2 for e in cone.members[2:]) / (2.0 * m2 * cj)
        if need > primal[j] and need <= m.variables[j].upper:
            primal[j] = need


def solve(m: OptModel, options: SolveOptions | None = None) -> SolveResult:
    """Solve a model; deterministic for identical inputs and options.

    An "optimal" result is additionally certified: the primal must satisfy
    every row and bound within options.report_tol, otherwise the status is
    downgraded to numeric_failure.
    """
    opt = options or SolveOptions()
    n = len(m.variables)
    t0 = time.perf_counter()
    if n == 0:
        return SolveResult(OPTIMAL, m.objective.const, {}, time.perf_counter() - t0)

    asm = _Assembler(n)
    for v in m.variables:
        if v.lower == v.upper:
            asm.eq({v.index: 1.0}, v.lower)
            continue
        if v.lower > -math.inf:
            asm.ineq({v.index: -1.0}, -v.lower)
        if v.upper < math.inf:
            asm.ineq({v.index: 1.0}, v.upper)
    for row in m.linear:
        if row.sense == SENSE_LE:
            asm.ineq(row.coefs, row.rhs)
        elif row.sense == SENSE_GE:
            asm.ineq({i: -c for i, c in row.coefs.items()}, -row.rhs)
        else:
            asm.eq(row.coefs, row.rhs)
    cone_blocks = []
    for cone in m.cones:
        members = cone.members if cone.kind == SECOND_ORDER else _rotated_to_soc(cone.members)
        cone_blocks.append(members)
        for e in members:
            for j in e.coefs:
                asm.touched[j] = True

    # inert variables (absent from rows, cones, and objective) would break
    # the solver's rank requirement; box them so the KKT system is regular
    for v in m.variables:
        if not asm.touched[v.index] and v.index not in m.objective.coefs:
            asm.ineq({v.index: 1.0}, 1.0)
            asm.ineq({v.index: -1.0}, 1.0)
    n_l = len(asm.h)
    for members in cone_blocks:
        asm.soc_block(members)

    c = matrix([m.objective.coefs.get(j, 0.0) for j in range(n)])
    G = spmatrix(asm.gv, asm.gi, asm.gj, (len(asm.h), n))
    h = matrix(asm.h)
    A = b = None
    if asm.b:
        A = spmatrix(asm.av, asm.ai, asm.aj, (len(asm.b), n))
        b = matrix(asm.b)
    dims = {"l": n_l, "q": asm.qdims, "s": []}

    cvx_opts = {
        "show_progress": False,
        "maxiters": opt.maxiters,
        "abstol": opt.abstol,
        "reltol": opt.reltol,
        "feastol": opt.feastol,
    }
    # the ldl KKT solver is markedly more robust than the default chol
    # factorization on models whose equality rows fix many variables
    def run(opts, kkt):
        if kkt is None:
            return solvers.conelp(c, G, h, dims, A=A, b=b, options=opts)
        return solvers.conelp(c, G, h, dims, A=A, b=b, options=opts, kktsolver=kkt)

    sol, status, failure = None, None, None
    relaxed = dict(cvx_opts)
    for key in ("abstol", "reltol", "feastol"):
        relaxed[key] = max(relaxed[key], 1e-7)
    for opts, kkt in ((cvx_opts, "ldl"), (relaxed, "ldl"), (relaxed, None)):
        try:
            sol = run(opts, kkt)
        except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
            failure = f"backend error: {exc}"
            continue
        status = sol["status"]
        if status != "unknown":
            break
        failure = "backend status 'unknown'"
    elapsed = time.perf_counter() - t0
    if sol is None or status is None or (status == "unknown" and sol["x"] is None):
        return SolveResult(NUMERIC_FAILURE, math.nan, {}, elapsed,
                           message=failure or "backend gave no result")

    if status == "primal infeasible":
        return SolveResult(INFEASIBLE, math.nan, {}, elapsed, message="primal infeasible")
    if status == "dual infeasible":
        return SolveResult(UNBOUNDED, -math.inf, {}, elapsed, message="dual infeasible")
    if status != "optimal" or sol["x"] is None:
        return SolveResult(NUMERIC_FAILURE, math.nan, {}, elapsed,
                           message=f"backend status {status!r}")

    primal = {j: sol["x"][j] for j in range(n)}
    _polish_epigraphs(m, primal)
    objective = m.objective.evaluate(primal)
    viol = max(m.max_row_violation(primal), m.bound_violation(primal))
    if viol > opt.report_tol:
        return SolveResult(NUMERIC_FAILURE, objective, primal, elapsed,
                           message=f"optimal point violates rows by {viol:.2e}",
                           max_violation=viol)
    return SolveResult(OPTIMAL, objective, primal, elapsed, max_violation=viol)

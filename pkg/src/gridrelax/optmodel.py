"""Solver-agnostic conic-program representation.

A model is a list of boxed variables, linear rows, and second-order /
rotated second-order cones, with an affine minimization objective.
Quadratic generation costs are lowered to rotated cones at build time so a
backend only ever sees linear rows plus cones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

SENSE_LE = "<="
SENSE_EQ = "=="
SENSE_GE = ">="

SECOND_ORDER = "second_order"
ROTATED = "rotated_second_order"


class NonconvexCostError(ValueError):
    """Quadratic cost with negative leading coefficient."""


class ModelConsistencyError(ValueError):
    """Row or objective references an undeclared variable, or a bad bound."""


@dataclass(frozen=True)
class VarRef:
    index: int
    name: str
    lower: float
    upper: float


class LinExpr:
    """Sparse affine expression: sum(coefs[i] * x_i) + const."""

    __slots__ = ("coefs", "const")

    def __init__(self, coefs=None, const=0.0):
        self.coefs = dict(coefs) if coefs else {}
        self.const = const

    def add(self, var: VarRef, coef: float) -> "LinExpr":
        if coef != 0.0:
            self.coefs[var.index] = self.coefs.get(var.index, 0.0) + coef
        return self

    def evaluate(self, values: dict) -> float:
        return self.const + sum(c * values[i] for i, c in self.coefs.items())

    def __iadd__(self, other: "LinExpr"):
        for i, c in other.coefs.items():
            self.coefs[i] = self.coefs.get(i, 0.0) + c
        self.const += other.const
        return self


@dataclass
class LinRow:
    coefs: dict  # variable index -> coefficient
    sense: str
    rhs: float
    tag: str

    def violation(self, values: dict) -> float:
        """How far the assignment is outside the row (0 when satisfied)."""
        lhs = sum(c * values[i] for i, c in self.coefs.items())
        if self.sense == SENSE_LE:
            return max(0.0, lhs - self.rhs)
        if self.sense == SENSE_GE:
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


@dataclass
class ConeRow:
    kind: str  # SECOND_ORDER or ROTATED
    members: list  # of LinExpr
    tag: str = ""

    def violation(self, values: dict) -> float:
        m = [e.evaluate(values) for e in self.members]
        if self.kind == SECOND_ORDER:
            return max(0.0, math.hypot(*m[1:]) - m[0])
        gap = 2.0 * m[0] * m[1] - sum(v * v for v in m[2:])
        return max(0.0, -gap, -m[0], -m[1])


class OptModel:
    """A minimization problem over boxed variables, linear rows, and cones."""

    def __init__(self, name=""):
        self.name = name
        self.variables: list[VarRef] = []
        self.linear: list[LinRow] = []
        self.cones: list[ConeRow] = []
        self.objective = LinExpr()
        self._names = set()

    def add_var(self, name, lower=-math.inf, upper=math.inf) -> VarRef:
        if name in self._names:
            raise ModelConsistencyError(f"duplicate variable name {name!r}")
        if not lower <= upper:
            raise ModelConsistencyError(f"variable {name!r}: lower {lower} > upper {upper}")
        v = VarRef(index=len(self.variables), name=name, lower=lower, upper=upper)
        self.variables.append(v)
        self._names.add(name)
        return v

    def add_linear(self, coefs: dict, sense: str, rhs: float, tag: str) -> LinRow:
        coefs = {i: c for i, c in coefs.items() if c != 0.0}
        if not coefs:
            raise ModelConsistencyError(f"row {tag!r} has no nonzero coefficient")
        self._check_indices(coefs, tag)
        row = LinRow(coefs=coefs, sense=sense, rhs=rhs, tag=tag)
        self.linear.append(row)
        return row

    def add_cone(self, kind: str, members: list, tag: str = "") -> ConeRow:
        for e in members:
            self._check_indices(e.coefs, tag)
        cone = ConeRow(kind=kind, members=list(members), tag=tag)
        self.cones.append(cone)
        return cone

    def add_objective(self, expr: LinExpr):
        self._check_indices(expr.coefs, "objective")
        self.objective += expr

    def _check_indices(self, coefs, tag):
        for i in coefs:
            if not 0 <= i < len(self.variables):
                raise ModelConsistencyError(f"{tag!r} references unknown variable {i}")

    def bound_violation(self, values: dict) -> float:
        out = 0.0
        for v in self.variables:
            x = values[v.index]
            out = max(out, v.lower - x, x - v.upper)
        return max(0.0, out)

    def row_violations(self, values: dict) -> list[tuple[str, float]]:
        """(tag, violation) for every linear row and cone at an assignment."""
        out = [(r.tag, r.violation(values)) for r in self.linear]
        out += [(c.tag, c.violation(values)) for c in self.cones]
        return out

    def max_row_violation(self, values: dict) -> float:
        return max((v for _, v in self.row_violations(values)), default=0.0)


def add_quadratic_cost_epigraph(
    m: OptModel, p_var: VarRef, c2: float, c1: float, c0: float, scale_mw: float
) -> LinExpr:
    """Lower c2*(scale_mw*p)^2 + c1*(scale_mw*p) + c0 to an affine term.

    With c2 > 0 a new epigraph variable e and the rotated cone
    2*e*(1/2) >= (sqrt(c2)*scale_mw*p)^2 are added and the returned term is
    e + c1*scale_mw*p + c0; with c2 = 0 the term is purely linear and no
    variable is created.
    """
    if c2 < 0:
        raise NonconvexCostError(f"c2 = {c2} < 0 for variable {p_var.name}")
    term = LinExpr(const=c0).add(p_var, c1 * scale_mw)
    if c2 == 0.0:
        return term
    e = m.add_var(f"cost_epi({p_var.name})", lower=0.0)
    m.add_cone(
        ROTATED,
        [
            LinExpr({e.index: 1.0}),
            LinExpr(const=0.5),
            LinExpr({p_var.index: math.sqrt(c2) * scale_mw}),
        ],
        tag=f"cost_epi({p_var.name})",
    )
    return term.add(e, 1.0)


def _num(v) -> str:
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return repr(float(v))


def _expr_str(coefs: dict, const: float = 0.0) -> str:
    parts = [f"{_num(c)}*x{i}" for i, c in sorted(coefs.items())]
    if const != 0.0 or not parts:
        parts.append(_num(const))
    return " + ".join(parts)


def export_text(m: OptModel) -> str:
    """Deterministic text listing of a model; identical models produce
    byte-identical output (terms are emitted in variable-index order)."""
    lines = [f"model {m.name or 'unnamed'}", f"minimize {_expr_str(m.objective.coefs, m.objective.const)}"]
    lines.append(f"variables {len(m.variables)}")
    for v in m.variables:
        lines.append(f"  x{v.index} {v.name} in [{_num(v.lower)}, {_num(v.upper)}]")
    lines.append(f"rows {len(m.linear)}")
    for r in m.linear:
        lines.append(f"  row {r.tag}: {_expr_str(r.coefs)} {r.sense} {_num(r.rhs)}")
    lines.append(f"cones {len(m.cones)}")
    for c in m.cones:
        body = " ; ".join(_expr_str(e.coefs, e.const) for e in c.members)
        lines.append(f"  cone {c.kind} {c.tag}: {body}")
    return "\n".join(lines) + "\n"

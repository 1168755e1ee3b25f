"""Matpower-style case file parsing and serialization (defined subset).

Supported columns, in order:

* bus:     bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
* gen:     bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin (trailing ignored)
* branch:  fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax
* gencost: model startup shutdown n c2 c1 c0   (model 2, n = 3 only)

MW/MVAr columns are divided by baseMVA, angles are converted from degrees
to radians, ratio 0 means unit tap and rateA 0 means no thermal limit.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources

from .network import (
    PAD_CAP,
    Branch,
    Bus,
    Generator,
    Network,
    degree_preimage,
    scaled_preimage,
)

BUS_COLS = 13
GEN_COLS = 10
BRANCH_COLS = 13
GENCOST_COLS = 7


class CaseError(ValueError):
    """Base class for case-file problems; ``code`` names the error class."""

    code = "CASE_ERROR"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingField(CaseError):
    code = "MISSING_FIELD"


class MalformedRow(CaseError):
    code = "MALFORMED_ROW"


class UnsupportedCost(CaseError):
    code = "UNSUPPORTED_COST"


class NoReference(CaseError):
    code = "NO_REFERENCE"


class DuplicateId(CaseError):
    code = "DUPLICATE_ID"


@dataclass
class CaseFile:
    base_mva: float
    bus: list = field(default_factory=list)
    gen: list = field(default_factory=list)
    branch: list = field(default_factory=list)
    gencost: list = field(default_factory=list)
    name: str = "case"
    version: str = "2"


_TABLE_RE = re.compile(r"mpc\.(bus|gen|branch|gencost)\s*=\s*\[")
_BASE_RE = re.compile(r"mpc\.baseMVA\s*=\s*([^;]+);")
_NAME_RE = re.compile(r"function\s+mpc\s*=\s*(\w+)")
_VERSION_RE = re.compile(r"mpc\.version\s*=\s*'([^']*)'")


def _row_values(text, line_no):
    vals = []
    for tok in text.replace(";", " ").replace(",", " ").split():
        try:
            vals.append(float(tok))
        except ValueError:
            raise MalformedRow(f"cannot read numeric token {tok!r}", line=line_no)
    return vals


def parse_case(text: str) -> CaseFile:
    """Parse case text into raw numeric tables.

    Comments (% to end of line), blank lines, and scientific notation are
    tolerated.  Raises MissingField when baseMVA is absent, MalformedRow
    (with line number) on ragged rows, and UnsupportedCost on any gencost
    row that is not a 3-coefficient polynomial (model 2, n = 3).
    """
    cf = CaseFile(base_mva=math.nan)
    have_base = False
    table = None  # name of the table currently being read
    expect = {"bus": BUS_COLS, "gen": GEN_COLS, "branch": BRANCH_COLS, "gencost": GENCOST_COLS}

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%")[0].strip()
        if not line:
            continue

        if table is None:
            m = _NAME_RE.search(line)
            if m:
                cf.name = m.group(1)
            m = _VERSION_RE.search(line)
            if m:
                cf.version = m.group(1)
            m = _BASE_RE.search(line)
            if m:
                try:
                    cf.base_mva = float(m.group(1))
                except ValueError:
                    raise MalformedRow("unreadable baseMVA value", line=line_no)
                have_base = True
            m = _TABLE_RE.search(line)
            if m:
                table = m.group(1)
                line = line[m.end():].strip()
                if not line:
                    continue
            else:
                continue

        closes = line.endswith("]") or line.endswith("];")
        line = line.rstrip(";").rstrip("]").strip()
        if line:
            row = _row_values(line, line_no)
            n = expect[table]
            if table == "gencost":
                if row and row[0] != 2.0:
                    raise UnsupportedCost(
                        f"gencost model {row[0]:g} not supported (polynomial model 2 only)",
                        line=line_no,
                    )
                if len(row) >= 4 and row[3] != 3.0:
                    raise UnsupportedCost(
                        f"gencost with n = {row[3]:g} not supported (n = 3 only)",
                        line=line_no,
                    )
                if len(row) != n:
                    raise MalformedRow(
                        f"gencost row has {len(row)} columns, expected {n}", line=line_no
                    )
            elif table == "gen":
                if len(row) < n:
                    raise MalformedRow(
                        f"gen row has {len(row)} columns, expected at least {n}",
                        line=line_no,
                    )
            elif len(row) != n:
                raise MalformedRow(
                    f"{table} row has {len(row)} columns, expected {n}", line=line_no
                )
            getattr(cf, table).append(row)
        if closes:
            table = None

    if not have_base:
        raise MissingField("mpc.baseMVA not found")
    return cf


def _angle_bound(deg_value, side):
    # 0 and +/-360 are the file encodings of "unconstrained"
    if deg_value == 0.0 or abs(deg_value) >= 360.0:
        return -PAD_CAP if side < 0 else PAD_CAP
    return math.radians(deg_value)


def to_network(cf: CaseFile) -> Network:
    """Map raw tables onto the per-unit network model.

    Out-of-service rows (status 0) are dropped, ratio 0 becomes unit tap,
    rateA 0 means no thermal limit, and angle limits of 0 or +/-360 are
    unconstrained (clamped to the PAD cap).
    """
    base = cf.base_mva
    buses = []
    seen = set()
    refs = []
    for row in cf.bus:
        bid = int(row[0])
        if bid in seen:
            raise DuplicateId(f"bus id {bid} appears twice")
        seen.add(bid)
        if int(row[1]) == 3:
            refs.append(bid)
        buses.append(
            Bus(
                id=bid,
                pd=row[2] / base,
                qd=row[3] / base,
                gs=row[4] / base,
                bs=row[5] / base,
                vmax=row[11],
                vmin=row[12],
            )
        )
    if not refs:
        raise NoReference("no type-3 (reference) bus in case")
    if len(refs) > 1:
        raise DuplicateId(f"multiple reference buses: {refs}")

    if cf.gencost and len(cf.gencost) != len(cf.gen):
        raise MalformedRow(
            f"{len(cf.gencost)} gencost rows for {len(cf.gen)} generators"
        )
    gens = []
    for k, row in enumerate(cf.gen):
        if row[7] == 0.0:
            continue
        c2 = c1 = c0 = 0.0
        if cf.gencost:
            _, _, _, _, c2, c1, c0 = cf.gencost[k][:GENCOST_COLS]
        gens.append(
            Generator(
                bus=int(row[0]),
                pmin=row[9] / base,
                pmax=row[8] / base,
                qmin=row[4] / base,
                qmax=row[3] / base,
                c2=c2,
                c1=c1,
                c0=c0,
            )
        )

    branches = []
    for row in cf.branch:
        if row[10] == 0.0:
            continue
        ratio = row[8]
        branches.append(
            Branch(
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                r=row[2],
                x=row[3],
                b_charge=row[4],
                s_max=None if row[5] == 0.0 else row[5] / base,
                tap=1.0 if ratio == 0.0 else ratio,
                shift=math.radians(row[9]),
                angle_min=_angle_bound(row[11], -1),
                angle_max=_angle_bound(row[12], +1),
            )
        )

    return Network(
        base_mva=base,
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(gens),
        reference_bus=refs[0],
    )


def _fmt(v) -> str:
    if v == math.inf:
        return "Inf"
    if v == -math.inf:
        return "-Inf"
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _mw(v, base):
    m = scaled_preimage(v, base)
    return v * base if m is None else m


def _deg(a):
    d = degree_preimage(a)
    return math.degrees(a) if d is None else d


def serialize(net: Network) -> str:
    """Emit the network as canonical case text.

    Deterministic; serialize -> parse_case -> to_network -> serialize is
    byte-identical because networks snap scaled fields on construction.
    Note that an angle bound of exactly 0 re-reads as unconstrained (that
    is what the file encoding of 0 means).
    """
    base = net.base_mva
    gen_buses = {g.bus for g in net.generators}
    lines = [
        "function mpc = gridrelax_case",
        "mpc.version = '2';",
        f"mpc.baseMVA = {_fmt(base)};",
        "",
        "% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin",
        "mpc.bus = [",
    ]
    for b in net.buses:
        btype = 3 if b.id == net.reference_bus else (2 if b.id in gen_buses else 1)
        cols = [
            b.id, btype, _mw(b.pd, base), _mw(b.qd, base), _mw(b.gs, base),
            _mw(b.bs, base), 1, 1, 0, 0, 1, b.vmax, b.vmin,
        ]
        lines.append("\t" + " ".join(_fmt(c) for c in cols) + ";")
    lines += ["];", "", "% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin", "mpc.gen = ["]
    for g in net.generators:
        cols = [
            g.bus, 0, 0, _mw(g.qmax, base), _mw(g.qmin, base), 1, base, 1,
            _mw(g.pmax, base), _mw(g.pmin, base),
        ]
        lines.append("\t" + " ".join(_fmt(c) for c in cols) + ";")
    lines += [
        "];",
        "",
        "% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax",
        "mpc.branch = [",
    ]
    for br in net.branches:
        ratio = 0.0 if (br.tap == 1.0 and br.shift == 0.0) else br.tap
        cols = [
            br.from_bus, br.to_bus, br.r, br.x, br.b_charge,
            0 if br.s_max is None else _mw(br.s_max, base), 0, 0,
            ratio, _deg(br.shift), 1, _deg(br.angle_min), _deg(br.angle_max),
        ]
        lines.append("\t" + " ".join(_fmt(c) for c in cols) + ";")
    lines += ["];", "", "% model startup shutdown n c2 c1 c0", "mpc.gencost = ["]
    for g in net.generators:
        lines.append("\t" + " ".join(_fmt(c) for c in (2, 0, 0, 3, g.c2, g.c1, g.c0)) + ";")
    lines += ["];", ""]
    return "\n".join(lines)


def fixture_text(name: str) -> str:
    """Raw text of an embedded case fixture (case3_base or case3_tight)."""
    return resources.files(__package__).joinpath(f"cases/{name}.m").read_text()


def load_fixture(name: str) -> Network:
    return to_network(parse_case(fixture_text(name)))


def case3_base() -> Network:
    """Embedded 3-bus system, 30 degree angle limits."""
    return load_fixture("case3_base")


def case3_tight() -> Network:
    """Embedded 3-bus system with angle limits reduced to 18 degrees."""
    return load_fixture("case3_tight")

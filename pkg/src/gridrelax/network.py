"""Typed per-unit transmission network model.

Every model builder and analysis routine consumes the immutable
:class:`Network` defined here.  All electrical quantities are per-unit on
``base_mva``; generation cost coefficients take MW arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

# Phase-angle-difference bounds at or beyond +/- pi/2 make tan() blow up in
# the linearized constraints; they are clamped to this cap.
PAD_CAP = math.pi / 2 - 1e-3

ERROR = "error"
WARNING = "warning"

NONNEGATIVE_IMPEDANCE_VIOLATED = "NONNEGATIVE_IMPEDANCE_VIOLATED"


class DegenerateBranchError(ValueError):
    """Branch with zero series impedance has no admittance."""


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # ERROR or WARNING
    code: str
    message: str

    def __str__(self):
        return f"{self.severity}:{self.code}: {self.message}"


@dataclass(frozen=True)
class Bus:
    id: int
    pd: float = 0.0
    qd: float = 0.0
    gs: float = 0.0
    bs: float = 0.0
    vmin: float = 0.9
    vmax: float = 1.1


@dataclass(frozen=True)
class Branch:
    """One transmission line or transformer between two buses.

    ``tap`` and ``shift`` describe the complex turns ratio t*exp(j*shift)
    on the from side; ``b_charge`` is the total line-charging susceptance.
    ``s_max`` is the apparent-power limit (None = unconstrained).  Angle
    bounds wider than +/- pi/2 are clamped to the PAD cap on construction.
    """

    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    s_max: float | None = None
    angle_min: float = -PAD_CAP
    angle_max: float = PAD_CAP

    def __post_init__(self):
        if self.angle_min <= -math.pi / 2:
            object.__setattr__(self, "angle_min", -PAD_CAP)
        if self.angle_max >= math.pi / 2:
            object.__setattr__(self, "angle_max", PAD_CAP)


@dataclass(frozen=True)
class Generator:
    bus: int
    pmin: float = 0.0
    pmax: float = math.inf
    qmin: float = -math.inf
    qmax: float = math.inf
    c2: float = 0.0  # $/MW^2 h
    c1: float = 0.0  # $/MW h
    c0: float = 0.0  # $/h

    def cost(self, pg_mw: float) -> float:
        return self.c2 * pg_mw**2 + self.c1 * pg_mw + self.c0


@dataclass(frozen=True)
class BranchConstants:
    """Series admittance and tap constants of a branch in real coordinates.

    g + jb is the series admittance 1/(r + jx); tR + jtI is the rectangular
    complex tap; tzR + jtzI is the product (r + jx)(tR + jtI), the shorthand
    used by the linearized phase-angle-difference rows.
    """

    g: float
    b: float
    tR: float
    tI: float
    tzR: float
    tzI: float

    @property
    def y(self) -> complex:
        return complex(self.g, self.b)

    @property
    def t(self) -> complex:
        return complex(self.tR, self.tI)


def branch_constants(br: Branch) -> BranchConstants:
    """Compute the real-number constants of a branch.

    Deterministic and side-effect free; raises DegenerateBranchError when
    the series impedance is zero.
    """
    d = br.r * br.r + br.x * br.x
    if d == 0.0:
        raise DegenerateBranchError(
            f"branch {br.from_bus}-{br.to_bus} has zero impedance"
        )
    g = br.r / d
    b = -br.x / d
    tR = br.tap * math.cos(br.shift)
    tI = br.tap * math.sin(br.shift)
    tzR = br.r * tR - br.x * tI
    tzI = br.r * tI + br.x * tR
    return BranchConstants(g=g, b=b, tR=tR, tI=tI, tzR=tzR, tzI=tzI)


# --- canonical float snapping -------------------------------------------
#
# Case-file columns store MW/MVAr (per-unit * base) and degrees (radians *
# 180/pi).  Multiplying back and forth between the two representations is
# not exactly invertible in binary floating point, which would break the
# byte-identical serialize/parse round trip.  Networks therefore snap every
# converted field, on construction, to the nearest value that has an exact
# preimage under the file-side conversion (at most 1 ulp away).


def _scan(v0, steps=3):
    yield v0
    up = down = v0
    for _ in range(steps):
        up = math.nextafter(up, math.inf)
        down = math.nextafter(down, -math.inf)
        yield up
        yield down


def scaled_preimage(v: float, scale: float) -> float | None:
    """A float M with M/scale == v exactly, or None if none is nearby."""
    for m in _scan(v * scale):
        if m / scale == v:
            return m
    return None


def degree_preimage(rad: float) -> float | None:
    """A float D with radians(D) == rad exactly, or None if none is nearby."""
    for d in _scan(math.degrees(rad)):
        if math.radians(d) == rad:
            return d
    return None


def _snap_scaled(v, scale):
    if v != v:  # nan passes through; validate() reports it
        return v
    if scaled_preimage(v, scale) is not None:
        return v
    return (v * scale) / scale


def _snap_angle(rad):
    if rad != rad:
        return rad
    if degree_preimage(rad) is not None:
        return rad
    return math.radians(math.degrees(rad))


@dataclass(frozen=True)
class Network:
    """Immutable per-unit network: buses, branches, generators, reference.

    The branch list is the set of undirected edges, each with an assigned
    from/to orientation.  Construction snaps base-scaled and degree-mapped
    fields so that case-file serialization round-trips exactly; everything
    else is stored as given.  Instances are safe to share across threads.
    """

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    reference_bus: int

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self._snap_bus(b) for b in self.buses))
        object.__setattr__(
            self, "branches", tuple(self._snap_branch(b) for b in self.branches)
        )
        object.__setattr__(
            self, "generators", tuple(self._snap_gen(g) for g in self.generators)
        )

    def _snap_bus(self, b: Bus) -> Bus:
        s = self.base_mva
        return replace(
            b,
            pd=_snap_scaled(b.pd, s),
            qd=_snap_scaled(b.qd, s),
            gs=_snap_scaled(b.gs, s),
            bs=_snap_scaled(b.bs, s),
        )

    def _snap_branch(self, br: Branch) -> Branch:
        s = self.base_mva
        return replace(
            br,
            s_max=None if br.s_max is None else _snap_scaled(br.s_max, s),
            shift=_snap_angle(br.shift),
            angle_min=_snap_angle(br.angle_min),
            angle_max=_snap_angle(br.angle_max),
        )

    def _snap_gen(self, g: Generator) -> Generator:
        s = self.base_mva
        return replace(
            g,
            pmin=_snap_scaled(g.pmin, s),
            pmax=_snap_scaled(g.pmax, s),
            qmin=_snap_scaled(g.qmin, s),
            qmax=_snap_scaled(g.qmax, s),
        )

    # --- lookups used by every model builder ---

    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    def gens_at(self, bus_id: int) -> list[int]:
        return [k for k, g in enumerate(self.generators) if g.bus == bus_id]

    def arcs(self) -> list[tuple[int, int, int]]:
        """Directed (branch index, tail, head) pairs, both orientations."""
        out = []
        for k, br in enumerate(self.branches):
            out.append((k, br.from_bus, br.to_bus))
            out.append((k, br.to_bus, br.from_bus))
        return out

    def arcs_at(self, bus_id: int) -> list[tuple[int, int, int]]:
        return [a for a in self.arcs() if a[1] == bus_id]

    def fallback_flow_bound(self) -> float:
        """Network-wide flow box used when a branch has no thermal limit.

        Conservative: total apparent demand magnitude plus total charging.
        """
        demand = sum(abs(b.pd) + abs(b.qd) for b in self.buses)
        charging = sum(abs(br.b_charge) for br in self.branches)
        return demand + charging


def _finite(*vals):
    return all(math.isfinite(v) for v in vals)


def validate(net: Network) -> list[Diagnostic]:
    """Structural and soundness diagnostics for a network.

    Returns an empty list iff the network satisfies every invariant.  A
    branch with r < 0 or x < 0 yields a NONNEGATIVE_IMPEDANCE_VIOLATED
    warning: the NF/CP/TH relaxations are not valid bounds on such data.
    """
    diags = []

    def err(code, msg):
        diags.append(Diagnostic(ERROR, code, msg))

    def warn(code, msg):
        diags.append(Diagnostic(WARNING, code, msg))

    if not _finite(net.base_mva) or net.base_mva <= 0:
        err("BAD_BASE_MVA", f"base_mva must be finite and positive, got {net.base_mva}")
    if not net.buses:
        err("EMPTY_NETWORK", "network has no buses")

    seen = set()
    for b in net.buses:
        if b.id in seen:
            err("DUPLICATE_ID", f"bus id {b.id} appears more than once")
        seen.add(b.id)
        if not _finite(b.pd, b.qd, b.gs, b.bs, b.vmin, b.vmax):
            err("NONFINITE_VALUE", f"bus {b.id} has a non-finite field")
            continue
        if not 0 < b.vmin <= b.vmax:
            err(
                "VOLTAGE_BOUNDS",
                f"bus {b.id} needs 0 < vmin <= vmax, got [{b.vmin}, {b.vmax}]",
            )

    if net.reference_bus not in seen:
        err("DANGLING_BUS", f"reference bus {net.reference_bus} does not exist")

    for k, br in enumerate(net.branches):
        tag = f"branch {k} ({br.from_bus}-{br.to_bus})"
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                err("DANGLING_BUS", f"{tag} references missing bus {end}")
        if br.from_bus == br.to_bus:
            err("SELF_LOOP", f"{tag} is a self loop")
        if not _finite(br.r, br.x, br.b_charge, br.tap, br.shift, br.angle_min, br.angle_max):
            err("NONFINITE_VALUE", f"{tag} has a non-finite field")
            continue
        if br.tap <= 0:
            err("BAD_TAP", f"{tag} needs tap > 0, got {br.tap}")
        if br.r * br.r + br.x * br.x == 0.0:
            err("ZERO_IMPEDANCE", f"{tag} has zero series impedance")
        if not br.angle_min <= 0.0 <= br.angle_max:
            err(
                "ANGLE_BOUNDS",
                f"{tag} angle bounds must straddle 0, got [{br.angle_min}, {br.angle_max}]",
            )
        if br.s_max is not None and (not _finite(br.s_max) or br.s_max < 0):
            err("BAD_THERMAL_LIMIT", f"{tag} needs s_max >= 0, got {br.s_max}")
        if br.r < 0 or br.x < 0:
            warn(
                NONNEGATIVE_IMPEDANCE_VIOLATED,
                f"{tag} has negative impedance component (r={br.r}, x={br.x}); "
                "NF/CP/TH bounds are unsound on this branch",
            )

    for k, g in enumerate(net.generators):
        tag = f"generator {k} at bus {g.bus}"
        if g.bus not in seen:
            err("DANGLING_BUS", f"{tag} references a missing bus")
        if g.pmin != g.pmin or g.qmin != g.qmin or g.pmax != g.pmax or g.qmax != g.qmax:
            err("NONFINITE_VALUE", f"{tag} has a NaN bound")
            continue
        if g.pmin > g.pmax or g.qmin > g.qmax:
            err("GEN_BOUNDS", f"{tag} has inverted output bounds")
        if not _finite(g.c2, g.c1, g.c0):
            err("NONFINITE_VALUE", f"{tag} has a non-finite cost coefficient")
        elif g.c2 < 0:
            err("NONCONVEX_COST", f"{tag} has c2 = {g.c2} < 0")

    return diags


def errors(diags: list[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diags if d.severity == ERROR]


def warnings_of(diags: list[Diagnostic], code: str) -> list[Diagnostic]:
    return [d for d in diags if d.severity == WARNING and d.code == code]

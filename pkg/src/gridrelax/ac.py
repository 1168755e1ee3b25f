"""Exact AC semantics: flow evaluation, feasibility, lifting, grid search.

The grid oracle is a desk-scale replacement for a global nonlinear solver:
it sweeps voltage magnitudes and non-reference angles on a regular grid,
recovers generator injections from the bus balance, discards infeasible
points, and refines around the incumbent.  It is intentionally guarded to
four buses.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .network import Network, branch_constants


class OracleDomainError(ValueError):
    """Network too large for exhaustive grid search (guard: <= 4 buses)."""


class OracleNoFeasible(RuntimeError):
    """No grid point passed the feasibility check; try a higher resolution."""

    code = "ORACLE_NO_FEASIBLE"


class SamplingError(RuntimeError):
    """Random AC-feasible point generation failed for this network."""


@dataclass(frozen=True)
class AcPoint:
    """Operating point: per-bus voltage (net.buses order), per-generator
    set points (net.generators order).  Reference angle must be 0."""

    vm: tuple
    va: tuple
    pg: tuple
    qg: tuple


@dataclass(frozen=True)
class WPoint:
    """Lift of an AC point: w per bus, (wr, wi) per branch, flows per arc."""

    w: tuple
    wr: tuple
    wi: tuple
    p: dict
    q: dict


@dataclass(frozen=True)
class FeasReport:
    feasible: bool
    violations: list  # (constraint tag, magnitude beyond the limit)


def _branch_flow_constants(br):
    """Complex constants (a_f, b_f, a_t, b_t) with
    S_ij = a_f*|Vi|^2 - b_f*Vi*conj(Vj),  S_ji = a_t*|Vj|^2 - b_t*conj(Vi*conj(Vj))."""
    bc = branch_constants(br)
    yc = bc.y.conjugate()
    t2 = br.tap**2
    shunt = yc - 0.5j * br.b_charge
    return shunt / t2, yc * bc.t / t2, shunt, yc * bc.t.conjugate() / t2


def eval_flows(net: Network, pt: AcPoint) -> dict:
    """Exact per-arc (p, q) flows from complex voltages."""
    idx = net.bus_index()
    v = [pt.vm[k] * cmath.exp(1j * pt.va[k]) for k in range(len(net.buses))]
    flows = {}
    for k, br in enumerate(net.branches):
        a_f, b_f, a_t, b_t = _branch_flow_constants(br)
        vi, vj = v[idx[br.from_bus]], v[idx[br.to_bus]]
        prod = vi * vj.conjugate()
        s_f = a_f * abs(vi) ** 2 - b_f * prod
        s_t = a_t * abs(vj) ** 2 - b_t * prod.conjugate()
        flows[(k, br.from_bus, br.to_bus)] = (s_f.real, s_f.imag)
        flows[(k, br.to_bus, br.from_bus)] = (s_t.real, s_t.imag)
    return flows


def lift(net: Network, pt: AcPoint) -> WPoint:
    """Lift to W-space: w = vm^2, wr + j*wi = Vi*conj(Vj), flows attached."""
    idx = net.bus_index()
    w = tuple(x * x for x in pt.vm)
    wr, wi = [], []
    for br in net.branches:
        i, j = idx[br.from_bus], idx[br.to_bus]
        prod = pt.vm[i] * pt.vm[j] * cmath.exp(1j * (pt.va[i] - pt.va[j]))
        wr.append(prod.real)
        wi.append(prod.imag)
    flows = eval_flows(net, pt)
    p = {arc: f[0] for arc, f in flows.items()}
    q = {arc: f[1] for arc, f in flows.items()}
    return WPoint(w=w, wr=tuple(wr), wi=tuple(wi), p=p, q=q)


def check_feasibility(net: Network, pt: AcPoint, tol: float = 1e-6) -> FeasReport:
    """Check an operating point against every constraint of the exact model.

    Violations list the amount by which a limit is exceeded; entries only
    appear when that amount is larger than tol.
    """
    idx = net.bus_index()
    viols = []

    def check(tag, amount):
        if amount > tol:
            viols.append((tag, amount))

    ref = idx[net.reference_bus]
    check("ref_angle", abs(pt.va[ref]))
    for k, bus in enumerate(net.buses):
        check(f"voltage_lb[{bus.id}]", bus.vmin - pt.vm[k])
        check(f"voltage_ub[{bus.id}]", pt.vm[k] - bus.vmax)
    for k, g in enumerate(net.generators):
        check(f"pg_lb[{k}]", g.pmin - pt.pg[k])
        check(f"pg_ub[{k}]", pt.pg[k] - g.pmax)
        check(f"qg_lb[{k}]", g.qmin - pt.qg[k])
        check(f"qg_ub[{k}]", pt.qg[k] - g.qmax)

    flows = eval_flows(net, pt)
    for k, br in enumerate(net.branches):
        if br.s_max:
            for tail, head in ((br.from_bus, br.to_bus), (br.to_bus, br.from_bus)):
                p, q = flows[(k, tail, head)]
                check(f"thermal[{tail},{head}]", math.hypot(p, q) - br.s_max)
        # PAD constrains angle(Vi*conj(Vj)) = va_i - va_j
        diff = pt.va[idx[br.from_bus]] - pt.va[idx[br.to_bus]]
        check(f"pad_lb[{br.from_bus},{br.to_bus}]", br.angle_min - diff)
        check(f"pad_ub[{br.from_bus},{br.to_bus}]", diff - br.angle_max)

    for k, bus in enumerate(net.buses):
        w = pt.vm[k] ** 2
        p_out = sum(flows[a][0] for a in net.arcs() if a[1] == bus.id)
        q_out = sum(flows[a][1] for a in net.arcs() if a[1] == bus.id)
        pg = sum(pt.pg[g] for g in net.gens_at(bus.id))
        qg = sum(pt.qg[g] for g in net.gens_at(bus.id))
        check(f"kcl_p[{bus.id}]", abs(pg - bus.pd - bus.gs * w - p_out))
        check(f"kcl_q[{bus.id}]", abs(qg - bus.qd + bus.bs * w - q_out))

    return FeasReport(feasible=not viols, violations=viols)


# --- vectorized evaluation over many candidate voltage assignments ---


class _Evaluator:
    """Precomputed constants for evaluating batches of voltage assignments."""

    def __init__(self, net: Network):
        self.net = net
        self.idx = net.bus_index()
        self.nb = len(net.buses)
        self.consts = [_branch_flow_constants(br) for br in net.branches]
        # generators grouped by bus, active set ordered cheapest marginal first
        self.gen_groups = []
        for bus in net.buses:
            ks = net.gens_at(bus.id)
            p_order = sorted(ks, key=lambda k: (net.generators[k].c1, net.generators[k].c2, k))
            self.gen_groups.append((p_order, list(ks)))

    def flows(self, vm, va):
        """vm, va: arrays [nb, N] -> per-branch from/to complex flows [N]."""
        v = vm * np.exp(1j * va)
        w = vm * vm
        out = []
        for k, br in enumerate(self.net.branches):
            a_f, b_f, a_t, b_t = self.consts[k]
            i, j = self.idx[br.from_bus], self.idx[br.to_bus]
            prod = v[i] * np.conj(v[j])
            s_f = a_f * w[i] - b_f * prod
            s_t = a_t * w[j] - b_t * np.conj(prod)
            out.append((s_f, s_t))
        return out

    def recover(self, vm, va):
        """Injection recovery at every bus for a batch of voltages.

        Returns (pg[ngen, N], qg[ngen, N], violation[N]) where violation is
        the worst generator-box/load-bus-KCL residual per candidate.  KCL
        holds exactly at generator buses: the bus's last generator absorbs
        the remainder.
        """
        net = self.net
        w = vm * vm
        N = vm.shape[1]
        flows = self.flows(vm, va)
        p_bal = np.zeros((self.nb, N))
        q_bal = np.zeros((self.nb, N))
        for k, br in enumerate(net.branches):
            s_f, s_t = flows[k]
            i, j = self.idx[br.from_bus], self.idx[br.to_bus]
            p_bal[i] += s_f.real
            q_bal[i] += s_f.imag
            p_bal[j] += s_t.real
            q_bal[j] += s_t.imag
        ngen = len(net.generators)
        pg = np.zeros((ngen, N))
        qg = np.zeros((ngen, N))
        viol = np.zeros(N)
        for b, bus in enumerate(net.buses):
            p_req = bus.pd + bus.gs * w[b] + p_bal[b]
            q_req = bus.qd - bus.bs * w[b] + q_bal[b]
            p_order, ks = self.gen_groups[b]
            if not ks:
                viol = np.maximum(viol, np.abs(p_req))
                viol = np.maximum(viol, np.abs(q_req))
                continue
            remaining = np.array(p_req, copy=True)
            for pos, k in enumerate(p_order):
                g = net.generators[k]
                if pos == len(p_order) - 1:
                    assign = remaining
                else:
                    assign = np.clip(remaining, g.pmin, g.pmax)
                pg[k] = assign
                remaining = remaining - assign
                if math.isfinite(g.pmin):
                    viol = np.maximum(viol, g.pmin - pg[k])
                if math.isfinite(g.pmax):
                    viol = np.maximum(viol, pg[k] - g.pmax)
            remaining = np.array(q_req, copy=True)
            for pos, k in enumerate(ks):
                g = net.generators[k]
                if pos == len(ks) - 1:
                    assign = remaining
                else:
                    assign = np.clip(remaining, g.qmin, g.qmax)
                qg[k] = assign
                remaining = remaining - assign
                if math.isfinite(g.qmin):
                    viol = np.maximum(viol, g.qmin - qg[k])
                if math.isfinite(g.qmax):
                    viol = np.maximum(viol, qg[k] - g.qmax)
        return pg, qg, viol

    def operational_violation(self, vm, va):
        """Worst thermal/PAD violation per candidate (voltage boxes are
        satisfied by grid construction)."""
        net = self.net
        N = vm.shape[1]
        viol = np.zeros(N)
        flows = self.flows(vm, va)
        for k, br in enumerate(net.branches):
            i, j = self.idx[br.from_bus], self.idx[br.to_bus]
            if br.s_max:
                s_f, s_t = flows[k]
                viol = np.maximum(viol, np.abs(s_f) - br.s_max)
                viol = np.maximum(viol, np.abs(s_t) - br.s_max)
            diff = va[i] - va[j]
            viol = np.maximum(viol, br.angle_min - diff)
            viol = np.maximum(viol, diff - br.angle_max)
        return viol

    def cost(self, pg):
        scale = self.net.base_mva
        total = np.zeros(pg.shape[1])
        for k, g in enumerate(self.net.generators):
            mw = pg[k] * scale
            total += g.c2 * mw * mw + g.c1 * mw + g.c0
        return total


def _max_pad(net):
    spans = [max(abs(br.angle_min), abs(br.angle_max)) for br in net.branches]
    return max(spans) if spans else 0.0


class _RigidAngleSolver:
    """Solves the angle of a bus with no active-power slack so that its
    active balance holds by construction (coarse grids essentially never
    satisfy that equality at sampled angles)."""

    def __init__(self, ev: _Evaluator, bus_pos: int, fixed_injection: float, span: float):
        self.ev = ev
        self.b = bus_pos
        self.fixed = fixed_injection
        self.span = span
        net = ev.net
        bus = net.buses[bus_pos]
        self.pd, self.gs = bus.pd, bus.gs
        self.incident = []  # (branch pos, True if bus is the from side)
        for k, br in enumerate(net.branches):
            if ev.idx[br.from_bus] == bus_pos:
                self.incident.append((k, True))
            if ev.idx[br.to_bus] == bus_pos:
                self.incident.append((k, False))

    def residual(self, vm, va, theta):
        """Active balance at the rigid bus when its angle is theta [N]."""
        net = self.ev.net
        w_b = vm[self.b] * vm[self.b]
        out = self.fixed - self.pd - self.gs * w_b
        for k, is_from in self.incident:
            br = net.branches[k]
            a_f, b_f, a_t, b_t = self.ev.consts[k]
            i, j = self.ev.idx[br.from_bus], self.ev.idx[br.to_bus]
            th_i = theta if i == self.b else va[i]
            th_j = theta if j == self.b else va[j]
            prod = vm[i] * vm[j] * np.exp(1j * (th_i - th_j))
            if is_from:
                s = a_f * (vm[i] * vm[i]) - b_f * prod
            else:
                s = a_t * (vm[j] * vm[j]) - b_t * np.conj(prod)
            out = out - s.real
        return out

    def solve(self, vm, va, scan=25, iters=60):
        """Bracketing scan plus bisection, vectorized over candidates.

        Returns (theta [N], solved mask [N]); unsolved columns have no sign
        change of the balance residual within the angle span.
        """
        n = vm.shape[1]
        ts = np.linspace(-self.span, self.span, scan)
        f_prev = self.residual(vm, va, np.full(n, ts[0]))
        lo = np.full(n, np.nan)
        hi = np.full(n, np.nan)
        flo = np.zeros(n)
        found = np.zeros(n, dtype=bool)
        for t in ts[1:]:
            f_next = self.residual(vm, va, np.full(n, t))
            hit = (~found) & (f_prev * f_next <= 0.0) & np.isfinite(f_prev) & np.isfinite(f_next)
            lo[hit] = t - (ts[1] - ts[0])
            hi[hit] = t
            flo[hit] = f_prev[hit]
            found |= hit
            f_prev = f_next
        theta = np.where(found, 0.5 * (lo + hi), 0.0)
        if found.any():
            for _ in range(iters):
                mid = 0.5 * (lo + hi)
                fm = self.residual(vm, va, mid)
                left = flo * fm <= 0.0
                hi = np.where(found & left, mid, hi)
                lo = np.where(found & ~left, mid, lo)
            theta = 0.5 * (lo + hi)
        return np.where(found, theta, 0.0), found


def grid_oracle(
    net: Network,
    resolution: int = 21,
    refine_rounds: int = 3,
    tol: float = 1e-4,
    chunk: int = 1 << 17,
) -> tuple[AcPoint, float]:
    """Desk-scale global search for the cheapest feasible operating point.

    Sweeps non-reference angles within +/- the widest angle limit and all
    magnitudes within their bounds on a resolution^d grid, then halves the
    grid span around the incumbent refine_rounds times at the same point
    count.  The angle of a bus with no active-power slack is not swept:
    its balance is enforced by construction (solved per grid point).
    Deterministic: equal-cost ties keep the lexicographically smallest
    grid coordinates.  Raises OracleNoFeasible if no grid point passes the
    feasibility tolerance.
    """
    nb = len(net.buses)
    if nb > 4:
        raise OracleDomainError(f"grid oracle is limited to 4 buses, got {nb}")
    if resolution < 1:
        raise ValueError("resolution must be >= 1")

    ev = _Evaluator(net)
    ref = net.bus_index()[net.reference_bus]
    span = _max_pad(net)
    rigid = [(k, fixed) for k, fixed in _rigid_active_buses(net) if k != ref]
    solver = None
    if rigid:
        solver = _RigidAngleSolver(ev, rigid[0][0], rigid[0][1], span)
    solved_bus = solver.b if solver else None

    angle_buses = [k for k in range(nb) if k != ref and k != solved_bus]
    dims = [(-span, span)] * len(angle_buses) + [(b.vmin, b.vmax) for b in net.buses]
    lo0 = np.array([d[0] for d in dims])
    hi0 = np.array([d[1] for d in dims])

    centers = 0.5 * (lo0 + hi0)
    widths = hi0 - lo0
    best_cost = math.inf
    best_coords = None

    def evaluate(vals, n):
        """Candidate columns -> (cost array with inf at infeasible, va rows)."""
        va = np.zeros((nb, n))
        for pos, b in enumerate(angle_buses):
            va[b] = vals[pos]
        vm = np.stack([vals[len(angle_buses) + b] for b in range(nb)])
        feasible = np.ones(n, dtype=bool)
        if solver is not None:
            theta, found = solver.solve(vm, va)
            va[solved_bus] = theta
            feasible &= found
        pg, qg, viol = ev.recover(vm, va)
        viol = np.maximum(viol, ev.operational_violation(vm, va))
        feasible &= viol <= tol
        cost = ev.cost(pg)
        cost[~feasible] = math.inf
        return cost, va

    for rnd in range(refine_rounds + 1):
        lo = np.maximum(lo0, centers - widths / 2.0)
        hi = np.minimum(hi0, centers + widths / 2.0)
        axes = [np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
        shape = tuple(len(ax) for ax in axes)
        total = int(np.prod(shape)) if shape else 1
        for start in range(0, total, chunk):
            flat = np.arange(start, min(start + chunk, total))
            coords = np.unravel_index(flat, shape) if shape else ()
            vals = [axes[d][coords[d]] for d in range(len(axes))]
            cost, _ = evaluate(vals, len(flat))
            kmin = int(np.argmin(cost))
            if cost[kmin] < best_cost:
                best_cost = float(cost[kmin])
                best_coords = np.array([v[kmin] for v in vals])
        if best_coords is None:
            raise OracleNoFeasible(
                f"no feasible point on the round-{rnd} grid at resolution "
                f"{resolution}; try a higher resolution"
            )
        centers = best_coords.copy()
        widths = widths / 2.0

    cost, va_full = evaluate([np.array([c]) for c in best_coords], 1)
    va = [float(va_full[b, 0]) for b in range(nb)]
    vm = [float(best_coords[len(angle_buses) + b]) for b in range(nb)]
    vm_arr = np.array(vm)[:, None]
    va_arr = np.array(va)[:, None]
    pg, qg, _ = ev.recover(vm_arr, va_arr)
    pt = AcPoint(
        vm=tuple(vm), va=tuple(va),
        pg=tuple(float(x) for x in pg[:, 0]),
        qg=tuple(float(x) for x in qg[:, 0]),
    )
    report = check_feasibility(net, pt, tol=tol)
    if not report.feasible:
        raise OracleNoFeasible(f"incumbent fails re-validation: {report.violations}")
    return pt, best_cost


def _rigid_active_buses(net):
    """Buses whose total active injection is fixed (no dispatch slack)."""
    out = []
    for k, bus in enumerate(net.buses):
        gens = net.gens_at(bus.id)
        slack = sum(net.generators[g].pmax - net.generators[g].pmin for g in gens)
        fixed = sum(net.generators[g].pmin for g in gens)
        if slack == 0.0:
            out.append((k, fixed))
    return out


def sample_feasible_points(
    net: Network, n: int, seed: int = 0, max_tries: int = 2000
) -> list[AcPoint]:
    """Draw n operating points that satisfy the exact model.

    Voltages are sampled uniformly within bounds and angle limits; angles
    of buses with no active-power slack are then solved so their balance
    holds exactly, and candidates violating any box, thermal, or angle
    constraint are rejected.  When the feasible region is too thin for
    uniform rejection (tight angle limits), sampling switches to a random
    walk started from a grid-search point.  Deterministic for a given seed.
    """
    nb = len(net.buses)
    if nb > 4:
        raise OracleDomainError(f"sampling is limited to 4 buses, got {nb}")
    rng = np.random.default_rng(seed)
    ev = _Evaluator(net)
    idx = net.bus_index()
    ref = idx[net.reference_bus]
    span = _max_pad(net)
    rigid = _rigid_active_buses(net)
    rigid_ids = [k for k, _ in rigid]
    if ref in rigid_ids:
        raise SamplingError("reference bus has no active-power slack")
    free_angle = [k for k in range(nb) if k != ref and k not in rigid_ids]

    def residuals(va, vm):
        vm_arr = np.array(vm)[:, None]
        va_arr = np.array(va)[:, None]
        flows = ev.flows(vm_arr, va_arr)
        bal = np.zeros(nb)
        for k, br in enumerate(net.branches):
            s_f, s_t = flows[k]
            bal[idx[br.from_bus]] += s_f.real[0]
            bal[idx[br.to_bus]] += s_t.real[0]
        out = []
        for b, fixed in rigid:
            bus = net.buses[b]
            out.append(fixed - bus.pd - bus.gs * vm[b] ** 2 - bal[b])
        return out

    def attempt(free_vals, vm):
        va = [0.0] * nb
        for pos, b in enumerate(free_angle):
            va[b] = free_vals[pos]
        if rigid:
            solved = _solve_rigid_angles(residuals, va, vm, rigid_ids, span)
            if solved is None:
                return None
            va = solved
        vm_arr = np.array(vm)[:, None]
        va_arr = np.array(va)[:, None]
        pg, qg, viol = ev.recover(vm_arr, va_arr)
        v = max(float(viol[0]), float(ev.operational_violation(vm_arr, va_arr)[0]))
        if v > 1e-9:
            return None
        return AcPoint(
            vm=tuple(vm), va=tuple(va),
            pg=tuple(float(x) for x in pg[:, 0]),
            qg=tuple(float(x) for x in qg[:, 0]),
        )

    def uniform_draw():
        vm = [rng.uniform(b.vmin, b.vmax) for b in net.buses]
        free_vals = [rng.uniform(-span, span) for _ in free_angle]
        return free_vals, vm

    points = []
    rejects = 0
    while len(points) < n and rejects < 500:
        pt = attempt(*uniform_draw())
        if pt is None:
            rejects += 1
        else:
            rejects = 0
            points.append(pt)
    if len(points) >= n:
        return points

    # thin feasible region: walk from a coarse-grid feasible point
    seed_pt = None
    for res in (15, 21, 27):
        try:
            seed_pt, _ = grid_oracle(net, resolution=res, refine_rounds=2, tol=1e-4)
            break
        except OracleNoFeasible:
            continue
    if seed_pt is None:
        raise SamplingError("no feasible operating point found to start from")
    cur_free = [seed_pt.va[b] for b in free_angle]
    cur_vm = list(seed_pt.vm)
    steps = [0.10 * 2.0 * span] * len(free_angle) + [
        0.10 * (b.vmax - b.vmin) for b in net.buses
    ]
    budget = max_tries * n
    misses = 0
    while len(points) < n and budget > 0:
        budget -= 1
        prop_free = [
            float(np.clip(cur_free[i] + rng.normal(0.0, steps[i]), -span, span))
            for i in range(len(free_angle))
        ]
        prop_vm = [
            float(np.clip(cur_vm[i] + rng.normal(0.0, steps[len(free_angle) + i]),
                          net.buses[i].vmin, net.buses[i].vmax))
            for i in range(nb)
        ]
        pt = attempt(prop_free, prop_vm)
        if pt is None:
            misses += 1
            if misses >= 200:
                steps = [0.6 * s for s in steps]
                misses = 0
            continue
        misses = 0
        points.append(pt)
        cur_free, cur_vm = prop_free, prop_vm
    if len(points) < n:
        raise SamplingError(
            f"only {len(points)} of {n} feasible samples found within budget"
        )
    return points


def _solve_rigid_angles(residuals, va, vm, rigid_ids, span):
    """Angles of fixed-injection buses that zero their active balance."""
    if len(rigid_ids) == 1:
        b = rigid_ids[0]

        def f(theta):
            trial = list(va)
            trial[b] = theta
            return residuals(trial, vm)[0]

        grid = np.linspace(-span, span, 25)
        vals = [f(t) for t in grid]
        for i in range(len(grid) - 1):
            if vals[i] == 0.0:
                va2 = list(va)
                va2[b] = float(grid[i])
                return va2
            if vals[i] * vals[i + 1] < 0.0:
                root = optimize.brentq(f, grid[i], grid[i + 1], xtol=1e-13)
                va2 = list(va)
                va2[b] = float(root)
                return va2
        return None

    def fvec(thetas):
        trial = list(va)
        for b, th in zip(rigid_ids, thetas):
            trial[b] = th
        return residuals(trial, vm)

    sol = optimize.root(fvec, np.zeros(len(rigid_ids)), method="hybr", tol=1e-12)
    if not sol.success or max(abs(r) for r in fvec(sol.x)) > 1e-10:
        return None
    if any(abs(th) > span for th in sol.x):
        return None
    va2 = list(va)
    for b, th in zip(rigid_ids, sol.x):
        va2[b] = float(th)
    return va2

"""Convex relaxations of extended AC power flow for transmission systems.

Builds the second-order-cone (SOC), network-flow (NF), and copper-plate
(CP) relaxations of the extended AC power flow problem, plus the TH
comparison model, over Matpower-style case data; solves them through a
conic backend; and verifies the relaxation-hierarchy and lift-containment
properties numerically.
"""

from .ac import (
    AcPoint,
    FeasReport,
    OracleDomainError,
    OracleNoFeasible,
    WPoint,
    check_feasibility,
    eval_flows,
    grid_oracle,
    lift,
    sample_feasible_points,
)
from .analysis import (
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
from .matpower import (
    CaseError,
    CaseFile,
    case3_base,
    case3_tight,
    parse_case,
    serialize,
    to_network,
)
from .network import (
    Branch,
    BranchConstants,
    Bus,
    Diagnostic,
    Generator,
    Network,
    branch_constants,
    validate,
)
from .optmodel import (
    ConeRow,
    LinExpr,
    LinRow,
    OptModel,
    VarRef,
    add_quadratic_cost_epigraph,
    export_text,
)
from .relaxations import (
    ModelUnsoundError,
    RelaxKind,
    VarMap,
    build,
    build_cp,
    build_nf,
    build_soc,
    build_th,
    infer_flow_bounds,
    infer_w_bounds,
)
from .solver import SolveOptions, SolveResult, solve

__version__ = "0.1.0"

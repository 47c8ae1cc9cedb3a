"""Lagrangian traffic state estimation with closed-form Lax-Hopf solutions."""

from .conditions import (
    DownstreamCondition,
    InitialCondition,
    InternalChain,
    InternalCondition,
    UpstreamCondition,
    build_downstream,
    build_initial,
    build_upstream,
    chain_from_samples,
    eval_condition,
)
from .errors import LagrangianLWRError
from .fundamental_diagram import (
    TriangularDiagram,
    congested_inverse,
    eval_psi,
    eval_psi_star,
    flow_from_density,
    mobile_century_diagram,
)
from .solver import SolutionField, evaluate_grid, fuse, lax_hopf_oracle

__version__ = "0.1.0"

__all__ = [
    "DownstreamCondition",
    "InitialCondition",
    "InternalChain",
    "InternalCondition",
    "LagrangianLWRError",
    "SolutionField",
    "TriangularDiagram",
    "UpstreamCondition",
    "build_downstream",
    "build_initial",
    "build_upstream",
    "chain_from_samples",
    "congested_inverse",
    "eval_condition",
    "eval_psi",
    "eval_psi_star",
    "evaluate_grid",
    "flow_from_density",
    "fuse",
    "lax_hopf_oracle",
    "mobile_century_diagram",
]

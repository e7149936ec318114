"""Consensus-based Bezier path planning through safe corridors."""

from .bernstein import bernstein_basis, diff_matrix, eval_bezier, norm_hessian
from .corridor import CorridorChain, SafeCorridor, chain_corridors, grow_corridor
from .gridmap import OccupancyGrid, distance_field, load_map, reference_path
from .objectives import Family, ObjectiveSpec, hessian_similarity, resolve_hessian
from .planner import PlanRequest, PiecewisePath, assemble_qp, plan, plan_on_grid
from .qp import QuadraticProgram, Status, kkt_check, solve

__all__ = [
    "CorridorChain", "Family", "ObjectiveSpec", "OccupancyGrid", "PiecewisePath",
    "PlanRequest", "QuadraticProgram", "SafeCorridor", "Status",
    "assemble_qp", "bernstein_basis", "chain_corridors", "diff_matrix",
    "distance_field", "eval_bezier", "grow_corridor", "hessian_similarity",
    "kkt_check", "load_map", "norm_hessian", "plan", "plan_on_grid",
    "reference_path", "resolve_hessian", "solve",
]

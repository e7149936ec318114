"""Piecewise Bezier path optimization over a chain of safe corridors."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import bernstein as bz
from .corridor import CorridorChain, chain_corridors, obstacles_from_grid
from .gridmap import DistanceField, GridPath, OccupancyGrid, distance_field, reference_path
from .objectives import REFERENCE_OBJECTIVES, Family, ObjectiveSpec, consensus_distance, resolve_hessian
from .qp import KktReport, QpSolution, QuadraticProgram, Settings, Status, kkt_check, solve

log = logging.getLogger(__name__)

DEFAULT_OBJECTIVE = ObjectiveSpec(Family.DERIVATIVE_NORM, 2)
SAMPLES_PER_SEGMENT = 101
SAFETY_TOL = 1e-6
CONTINUITY_TOL = 1e-6
KKT_TOL = 1e-5


class PlanningError(RuntimeError):
    pass


class InfeasibleError(PlanningError):
    def __init__(self, message: str, blocks: Sequence[str] = ()):
        super().__init__(message)
        self.blocks = tuple(blocks)


class ValidationError(PlanningError):
    pass


@dataclass(frozen=True)
class PlanRequest:
    start: np.ndarray
    goal: np.ndarray
    chain: CorridorChain
    degree: int = 3
    continuity: int = 1
    objective: ObjectiveSpec | Sequence[ObjectiveSpec] = DEFAULT_OBJECTIVE
    # literal Table-I range: no corridor constraint on the last segment
    strict_paper: bool = False

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float))

    @property
    def n_segments(self) -> int:
        return len(self.chain)

    @property
    def dim(self) -> int:
        return self.start.shape[0]

    def objectives(self) -> list[ObjectiveSpec]:
        if isinstance(self.objective, ObjectiveSpec):
            return [self.objective] * self.n_segments
        objs = list(self.objective)
        if len(objs) != self.n_segments:
            raise ValueError(f"{len(objs)} per-segment objectives for {self.n_segments} segments")
        return objs

    def constrained_segments(self) -> range:
        m = self.n_segments
        return range(m - 1) if self.strict_paper else range(m)


@dataclass
class Diagnostics:
    residual_eq: float
    residual_in: float
    continuity: float
    min_sampled_margin: float
    kkt: KktReport
    solver_iterations: int
    polished: bool


@dataclass
class PiecewisePath:
    segments: list[np.ndarray]
    objectives: list[ObjectiveSpec]
    objective_values: list[float]
    diagnostics: Diagnostics | None = None
    continuity: int = 1

    @property
    def degree(self) -> int:
        return self.segments[0].shape[0] - 1

    def sample(self, per_segment: int = SAMPLES_PER_SEGMENT) -> tuple[np.ndarray, np.ndarray]:
        """(t, points) with global parameter t = segment index + local t."""
        ts = np.linspace(0.0, 1.0, per_segment)
        tt, pp = [], []
        for i, P in enumerate(self.segments):
            tt.append(i + ts)
            pp.append(bz.sample_bezier(P, ts))
        return np.concatenate(tt), np.vstack(pp)

    def polyline(self, per_segment: int = SAMPLES_PER_SEGMENT) -> np.ndarray:
        """Sampled curve with duplicated junction points removed."""
        ts = np.linspace(0.0, 1.0, per_segment)
        parts = [bz.sample_bezier(P, ts) for P in self.segments]
        return np.vstack([parts[0]] + [p[1:] for p in parts[1:]])

    def to_json(self, metrics: dict | None = None) -> dict:
        return {
            "segments": [
                {"degree": int(P.shape[0] - 1), "control_points": P.tolist()} for P in self.segments
            ],
            "metrics": metrics if metrics is not None else path_metrics(self),
        }


def _var_index(seg: int, j: int, dim: int, n: int, d: int) -> int:
    # segment-major, then control point, then coordinate
    return (seg * (n + 1) + j) * d + dim


@dataclass(frozen=True)
class AssembledQP:
    qp: QuadraticProgram
    eq_labels: tuple[str, ...]
    in_labels: tuple[str, ...]


def _check_request(req: PlanRequest) -> None:
    n, C = req.degree, req.continuity
    if C < 0 or int(C) != C:
        raise ValueError(f"continuity must be a nonnegative integer, got {C}")
    if n < max(C, 1):
        raise ValueError(f"degree {n} is below max(continuity, 1) = {max(C, 1)}")
    if n < 2 * C + 1:
        warnings.warn(
            f"degree {n} < 2C+1 = {2 * C + 1}: continuity rows pin most control points",
            RuntimeWarning,
            stacklevel=3,
        )
    if req.n_segments < 1:
        raise ValueError("corridor chain is empty")
    if req.start.shape != req.goal.shape:
        raise ValueError("start and goal dimensions differ")
    first, last = req.chain.corridors[0], req.chain.corridors[-1]
    if not first.contains(req.start, 1e-9):
        raise ValueError(f"start {req.start.tolist()} lies outside the first corridor")
    if not req.strict_paper or req.n_segments == 1:
        if not last.contains(req.goal, 1e-9):
            raise ValueError(f"goal {req.goal.tolist()} lies outside the last corridor")


def assemble_qp(req: PlanRequest) -> AssembledQP:
    """Build the constrained program for all segments at once.

    Cost: sum_i trace(P_i^T L_i P_i), written as 1/2 x^T Q x with Q = 2 kron(L_i, I_d).
    """
    _check_request(req)
    n, C, d, m = req.degree, req.continuity, req.dim, req.n_segments
    objs = req.objectives()
    N = m * (n + 1) * d
    Q = np.zeros((N, N))
    for i, spec in enumerate(objs):
        L = resolve_hessian(spec, n)
        s = i * (n + 1) * d
        Q[s : s + (n + 1) * d, s : s + (n + 1) * d] = 2.0 * np.kron(L, np.eye(d))

    eq_rows, eq_rhs, eq_labels = [], [], []
    for dim in range(d):
        row = np.zeros(N)
        row[_var_index(0, 0, dim, n, d)] = 1.0
        eq_rows.append(row), eq_rhs.append(req.start[dim]), eq_labels.append("start")
    for dim in range(d):
        row = np.zeros(N)
        row[_var_index(m - 1, n, dim, n, d)] = 1.0
        eq_rows.append(row), eq_rhs.append(req.goal[dim]), eq_labels.append("goal")
    for c in range(C + 1):
        D = bz.diff_matrix(n, c)
        last, first = D[-1], D[0]
        for i in range(m - 1):
            for dim in range(d):
                row = np.zeros(N)
                for j in range(n + 1):
                    row[_var_index(i, j, dim, n, d)] += last[j]
                    row[_var_index(i + 1, j, dim, n, d)] -= first[j]
                eq_rows.append(row), eq_rhs.append(0.0)
                eq_labels.append(f"continuity[{i}->{i + 1}, order {c}]")

    in_rows, in_rhs, in_labels = [], [], []
    for i in req.constrained_segments():
        A, b = req.chain.corridors[i].constraints()
        for j in range(n + 1):
            for f in range(len(b)):
                row = np.zeros(N)
                for dim in range(d):
                    row[_var_index(i, j, dim, n, d)] = A[f, dim]
                in_rows.append(row), in_rhs.append(b[f]), in_labels.append(f"corridor[{i}]")

    qp = QuadraticProgram(
        Q, np.zeros(N),
        np.array(eq_rows).reshape(-1, N), np.array(eq_rhs),
        np.array(in_rows).reshape(-1, N), np.array(in_rhs),
    )  # fmt: skip
    return AssembledQP(qp, tuple(eq_labels), tuple(in_labels))


def split_solution(x: np.ndarray, m: int, n: int, d: int) -> list[np.ndarray]:
    return [x[i * (n + 1) * d : (i + 1) * (n + 1) * d].reshape(n + 1, d).copy() for i in range(m)]


def _blocks_from_certificate(asm: AssembledQP, cert: np.ndarray | None) -> list[str]:
    if cert is None:
        return []
    labels = asm.eq_labels + asm.in_labels
    mags = np.abs(cert)
    if mags.max(initial=0.0) == 0:
        return []
    hot = mags >= 1e-3 * mags.max()
    return sorted({labels[i] for i in np.flatnonzero(hot)})


def continuity_error(segments: list[np.ndarray], C: int) -> float:
    err = 0.0
    for P, Pn in zip(segments[:-1], segments[1:]):
        for c in range(C + 1):
            a = bz.eval_derivative(P, c, 1.0)
            b = bz.eval_derivative(Pn, c, 0.0)
            err = max(err, float(np.linalg.norm(a - b)))
    return err


def sampled_margin(segments: list[np.ndarray], chain: CorridorChain, which: Sequence[int]) -> float:
    """Smallest b - A B(t) over 101 samples per constrained segment (+inf if unconstrained)."""
    ts = np.linspace(0.0, 1.0, SAMPLES_PER_SEGMENT)
    worst = math.inf
    for i in which:
        S = chain.corridors[i]
        if len(S.b) == 0:
            continue
        worst = min(worst, float(S.margins(bz.sample_bezier(segments[i], ts)).min()))
    return worst


def plan(req: PlanRequest, settings: Settings | None = None) -> PiecewisePath:
    asm = assemble_qp(req)
    sol: QpSolution = solve(asm.qp, settings)
    if sol.status is Status.INFEASIBLE:
        blocks = _blocks_from_certificate(asm, sol.certificate)
        raise InfeasibleError(
            "Bezier program is infeasible"
            + (f"; conflicting constraint blocks: {', '.join(blocks)}" if blocks else ""),
            blocks,
        )
    if sol.status is Status.MAX_ITER:
        raise PlanningError(
            f"QP solver stopped at the iteration cap ({sol.iterations}); "
            f"residuals eq={sol.residual_eq:.2e} in={sol.residual_in:.2e}"
        )
    n, d, m = req.degree, req.dim, req.n_segments
    segments = split_solution(sol.x, m, n, d)
    objs = req.objectives()
    values = [consensus_distance(resolve_hessian(o, n), P) for o, P in zip(objs, segments)]

    kkt = kkt_check(asm.qp, sol.x, KKT_TOL)
    diag = Diagnostics(
        residual_eq=sol.residual_eq,
        residual_in=sol.residual_in,
        continuity=continuity_error(segments, req.continuity),
        min_sampled_margin=sampled_margin(segments, req.chain, req.constrained_segments()),
        kkt=kkt,
        solver_iterations=sol.iterations,
        polished=sol.polished,
    )
    path = PiecewisePath(segments, objs, values, diag, req.continuity)
    validate(path)
    return path


def validate(path: PiecewisePath) -> None:
    d = path.diagnostics
    problems = []
    if d.min_sampled_margin < -SAFETY_TOL:
        problems.append(f"sampled curve leaves its corridor by {-d.min_sampled_margin:.2e}")
    if d.continuity > CONTINUITY_TOL:
        problems.append(f"continuity residual {d.continuity:.2e}")
    if max(d.residual_eq, d.residual_in) > SAFETY_TOL:
        problems.append(f"constraint residuals eq={d.residual_eq:.2e} in={d.residual_in:.2e}")
    if not d.kkt.ok:
        problems.append(f"KKT certificate failed: {d.kkt.summary()}")
    if problems:
        raise ValidationError("; ".join(problems))


def menger_curvature(points: np.ndarray) -> np.ndarray:
    """Curvature of the circle through each interior triple of a polyline."""
    a, b, c = points[:-2], points[1:-1], points[2:]
    ab = np.linalg.norm(b - a, axis=1)
    bc = np.linalg.norm(c - b, axis=1)
    ca = np.linalg.norm(a - c, axis=1)
    u, v = b - a, c - b
    cross = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
    denom = ab * bc * ca
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(denom > 0, 2.0 * cross / denom, 0.0)
    return k


def path_metrics(path: PiecewisePath) -> dict:
    pts = path.polyline()
    length = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    curv = menger_curvature(pts) if len(pts) >= 3 else np.zeros(0)
    n = path.degree
    consensus = {}
    for label, spec in REFERENCE_OBJECTIVES.items():
        if spec.order in spec.valid_orders(n):
            L = resolve_hessian(spec, n)
            consensus[spec.name] = float(sum(consensus_distance(L, P) for P in path.segments))
    return {
        "length": length,
        "max_curvature": float(curv.max(initial=0.0)),
        "segments": len(path.segments),
        "degree": n,
        "objective": [o.name for o in path.objectives][0] if path.objectives else None,
        "objective_value": float(sum(path.objective_values)),
        "consensus": consensus,
    }


@dataclass
class PipelineResult:
    grid: OccupancyGrid
    field: DistanceField
    reference: GridPath
    polyline: np.ndarray
    chain: CorridorChain
    path: PiecewisePath | None = None
    extra: dict = field(default_factory=dict)


class InputError(ValueError):
    pass


def locate(grid: OccupancyGrid, point, name: str) -> tuple[int, int]:
    cell = grid.world_to_cell(point)
    where = f"({float(point[0]):g}, {float(point[1]):g})"
    if not grid.in_bounds(cell):
        raise InputError(f"{name} {where} is outside the map")
    if grid.is_occupied(cell):
        raise InputError(f"{name} {where} lies in occupied cell (row={cell[0]}, col={cell[1]})")
    return cell


def build_corridors(grid: OccupancyGrid, start, goal, strict_paper: bool = False) -> PipelineResult:
    """Reference path and corridor chain between two world points."""
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    s_cell = locate(grid, start, "start")
    g_cell = locate(grid, goal, "goal")
    fld = distance_field(grid)
    ref = reference_path(grid, s_cell, g_cell, length_weighted=not strict_paper, field=fld)
    poly = [start]
    for p in ref.points:
        if np.any(p != poly[-1]):
            poly.append(p)
    if np.any(goal != poly[-1]):
        poly.append(goal)
    poly = np.array(poly)
    obstacles = obstacles_from_grid(grid, border=True)
    chain = chain_corridors(poly, obstacles, min_advance=grid.resolution)
    return PipelineResult(grid, fld, ref, poly, chain)


def plan_on_grid(
    grid: OccupancyGrid,
    start,
    goal,
    degree: int = 3,
    continuity: int = 1,
    objective: ObjectiveSpec = DEFAULT_OBJECTIVE,
    strict_paper: bool = False,
    settings: Settings | None = None,
) -> PipelineResult:
    res = build_corridors(grid, start, goal, strict_paper)
    req = PlanRequest(
        np.asarray(start, float), np.asarray(goal, float), res.chain,
        degree, continuity, objective, strict_paper,
    )  # fmt: skip
    res.path = plan(req, settings)
    return res

import math
import warnings
from importlib.resources import files

import numpy as np
import pytest
from numpy.testing import assert_allclose

from consensus_bezier import bernstein as bz
from consensus_bezier.corridor import CorridorChain, SafeCorridor
from consensus_bezier.gridmap import NoPathError, OccupancyGrid, load_map
from consensus_bezier.objectives import Family, ObjectiveSpec, resolve_hessian
from consensus_bezier.planner import (
    InfeasibleError,
    InputError,
    PiecewisePath,
    PlanRequest,
    assemble_qp,
    build_corridors,
    menger_curvature,
    path_metrics,
    plan,
    plan_on_grid,
)
from consensus_bezier.qp import kkt_check

DDIFF1 = ObjectiveSpec("ddiff", 1)
DDIFF2 = ObjectiveSpec("ddiff", 2)


def box(x0, x1, y0, y1) -> SafeCorridor:
    """Axis-aligned corridor {x0 < x < x1, y0 < y < y1}."""
    c = np.array([(x0 + x1) / 2, (y0 + y1) / 2])
    X = np.array([[x1, c[1]], [x0, c[1]], [c[0], y1], [c[0], y0]])
    return SafeCorridor(c, X)


def plane() -> SafeCorridor:
    return SafeCorridor(np.zeros(2), np.empty((0, 2)))


def chain(*corridors) -> CorridorChain:
    m = len(corridors)
    path = np.array([S.center for S in corridors] + [corridors[-1].center + 1e-3])
    return CorridorChain(tuple(corridors), tuple(k / m for k in range(m)), path)


# an L-shaped passage: right along y in (0, 1), then up along x in (3, 4)
L_CHAIN = chain(box(0.0, 4.0, 0.0, 1.0), box(3.0, 4.0, 0.0, 4.0))
L_START, L_GOAL = np.array([0.5, 0.5]), np.array([3.5, 3.5])


def seg_path(segments, objective=DDIFF1):
    return PiecewisePath([np.asarray(P, float) for P in segments], [objective] * len(segments), [0.0] * len(segments))


class TestAssembly:
    def test_single_segment_counts(self):
        S = box(0, 1, 0, 1)
        asm = assemble_qp(PlanRequest([0.2, 0.2], [0.8, 0.8], chain(S), degree=3))
        assert asm.qp.n_var == 8
        assert asm.qp.A_eq.shape == (4, 8)
        assert asm.qp.A_in.shape == (4 * len(S.b), 8)

    def test_junction_rows(self):
        asm = assemble_qp(PlanRequest(L_START, L_GOAL, L_CHAIN, degree=3, continuity=1))
        C, d = 1, 2
        junction = [lab for lab in asm.eq_labels if lab.startswith("continuity")]
        assert len(junction) == (C + 1) * d
        assert len(asm.eq_labels) == 2 * (C + 1) * d

    def test_variable_layout(self):
        # segment-major, then control point, then coordinate
        asm = assemble_qp(PlanRequest([0.1, 0.2], [0.3, 0.4], chain(plane()), degree=2, continuity=0))
        A, b = asm.qp.A_eq, asm.qp.b_eq
        assert_allclose(A[:4], np.eye(6)[[0, 1, 4, 5]])
        assert_allclose(b, [0.1, 0.2, 0.3, 0.4])

    def test_cost_is_kron_of_laplacian(self):
        asm = assemble_qp(PlanRequest([0, 0], [1, 1], chain(plane()), degree=3, objective=DDIFF2))
        L = resolve_hessian(DDIFF2, 3)
        assert_allclose(asm.qp.Q, 2 * np.kron(L, np.eye(2)))

    def test_continuity_rows_follow_difference_matrix(self):
        asm = assemble_qp(PlanRequest(L_START, L_GOAL, L_CHAIN, degree=3, continuity=1))
        row = asm.qp.A_eq[asm.eq_labels.index("continuity[0->1, order 1]")]
        x_part = row[0::2]
        assert_allclose(x_part[:4], bz.diff_matrix(3, 1)[-1])
        assert_allclose(x_part[4:], -bz.diff_matrix(3, 1)[0])

    def test_strict_mode_leaves_last_segment_free(self):
        full = assemble_qp(PlanRequest(L_START, L_GOAL, L_CHAIN))
        strict = assemble_qp(PlanRequest(L_START, L_GOAL, L_CHAIN, strict_paper=True))
        assert set(strict.in_labels) == {"corridor[0]"}
        assert len(full.in_labels) == 2 * len(strict.in_labels)


class TestRequestValidation:
    def test_degree_below_continuity(self):
        with pytest.raises(ValueError, match="below"):
            assemble_qp(PlanRequest(L_START, L_GOAL, L_CHAIN, degree=1, continuity=2))

    def test_low_degree_warns(self):
        with pytest.warns(RuntimeWarning, match="2C\\+1"):
            assemble_qp(PlanRequest(L_START, L_GOAL, L_CHAIN, degree=2, continuity=1))

    def test_start_outside_first_corridor(self):
        with pytest.raises(ValueError, match="start"):
            assemble_qp(PlanRequest([3.5, 3.0], L_GOAL, L_CHAIN))

    def test_goal_outside_last_corridor(self):
        with pytest.raises(ValueError, match="goal"):
            assemble_qp(PlanRequest(L_START, [1.0, 0.5], L_CHAIN))

    def test_per_segment_objective_count(self):
        with pytest.raises(ValueError, match="per-segment"):
            assemble_qp(PlanRequest(L_START, L_GOAL, L_CHAIN, objective=[DDIFF1]))

    def test_negative_continuity(self):
        with pytest.raises(ValueError):
            assemble_qp(PlanRequest(L_START, L_GOAL, L_CHAIN, continuity=-1))


class TestPlan:
    def test_straight_segment(self):
        path = plan(PlanRequest([0.0, 0.0], [2.0, 1.0], chain(plane()), degree=1, continuity=0,
                                objective=ObjectiveSpec("dnorm", 1)))  # fmt: skip
        assert_allclose(path.segments[0], [[0.0, 0.0], [2.0, 1.0]], atol=1e-10)

    @pytest.mark.parametrize("family", ["dnorm", "ddiff", "dvar", "ddiffvar"])
    def test_start_equals_goal_is_perfect_consensus(self, family):
        p = [0.4, 0.6]
        path = plan(PlanRequest(p, p, chain(box(0, 1, 0, 1)), objective=ObjectiveSpec(family, 1)))
        assert_allclose(path.segments[0], np.tile(p, (4, 1)), atol=1e-8)
        assert path.objective_values[0] == pytest.approx(0.0, abs=1e-12)

    def test_first_difference_spaces_points_evenly(self):
        path = plan(PlanRequest([0.0, 0.0], [3.0, -1.5], chain(plane()), degree=3, objective=DDIFF1))
        assert_allclose(path.segments[0], np.linspace([0.0, 0.0], [3.0, -1.5], 4), atol=1e-9)

    @pytest.mark.parametrize("objective", [DDIFF1, DDIFF2, ObjectiveSpec("dnorm", 2), ObjectiveSpec("dvar", 1)])
    def test_l_passage_is_safe_and_smooth(self, objective):
        path = plan(PlanRequest(L_START, L_GOAL, L_CHAIN, degree=3, continuity=1, objective=objective))
        ts = np.linspace(0, 1, 101)
        for P, S in zip(path.segments, L_CHAIN.corridors):
            A, b = S.constraints()
            assert np.all(P @ A.T <= b + 1e-6)
            assert np.all(bz.sample_bezier(P, ts) @ A.T <= b + 1e-6)
        P0, P1 = path.segments
        for c in range(2):
            assert_allclose(bz.eval_derivative(P0, c, 1.0), bz.eval_derivative(P1, c, 0.0), atol=1e-6)
        assert_allclose(P0[0], L_START, atol=1e-9)
        assert_allclose(P1[-1], L_GOAL, atol=1e-9)
        d = path.diagnostics
        assert d.kkt.ok and d.polished
        assert d.min_sampled_margin >= -1e-6

    def test_solution_passes_independent_kkt_check(self):
        req = PlanRequest(L_START, L_GOAL, L_CHAIN, objective=DDIFF2)
        path = plan(req)
        x = np.concatenate([P.ravel() for P in path.segments])
        assert kkt_check(assemble_qp(req).qp, x, 1e-5).ok

    def test_second_order_continuity(self):
        path = plan(PlanRequest(L_START, L_GOAL, L_CHAIN, degree=5, continuity=2))
        P0, P1 = path.segments
        for c in range(3):
            assert_allclose(bz.eval_derivative(P0, c, 1.0), bz.eval_derivative(P1, c, 0.0), atol=1e-6)

    def test_disjoint_corridors_are_infeasible(self):
        ch = chain(box(0, 1, 0, 1), box(2, 3, 0, 1))
        with pytest.raises(InfeasibleError) as exc:
            plan(PlanRequest([0.5, 0.5], [2.5, 0.5], ch))
        assert exc.value.blocks
        assert any(b.startswith("corridor") for b in exc.value.blocks)

    def test_per_segment_objectives(self):
        path = plan(PlanRequest(L_START, L_GOAL, L_CHAIN, objective=[DDIFF1, DDIFF2]))
        assert [o.name for o in path.objectives] == ["ddiff1", "ddiff2"]

    def test_strict_mode_plans(self):
        path = plan(PlanRequest(L_START, L_GOAL, L_CHAIN, strict_paper=True))
        assert path.diagnostics.kkt.ok


class TestPathOutput:
    def test_sampling(self):
        path = plan(PlanRequest(L_START, L_GOAL, L_CHAIN))
        t, pts = path.sample()
        assert t.shape == (202,) and pts.shape == (202, 2)
        assert t[0] == 0.0 and t[-1] == 2.0
        assert path.polyline().shape == (201, 2)

    def test_json(self):
        path = plan(PlanRequest(L_START, L_GOAL, L_CHAIN))
        doc = path.to_json()
        assert [s["degree"] for s in doc["segments"]] == [3, 3]
        assert np.array(doc["segments"][0]["control_points"]).shape == (4, 2)
        assert {"length", "max_curvature", "consensus"} <= set(doc["metrics"])


class TestMetrics:
    def test_straight_line_has_no_curvature(self):
        m = path_metrics(seg_path([np.linspace([0, 0], [3, 4], 4)]))
        assert m["max_curvature"] == pytest.approx(0.0, abs=1e-9)
        assert m["length"] == pytest.approx(5.0)

    def test_semicircle(self):
        # two cubic quarter-circle arcs of radius r
        r, k = 2.0, 4.0 / 3.0 * (math.sqrt(2.0) - 1.0)
        q1 = r * np.array([[1, 0], [1, k], [k, 1], [0, 1]])
        q2 = r * np.array([[0, 1], [-k, 1], [-1, k], [-1, 0]])
        m = path_metrics(seg_path([q1, q2]))
        assert m["max_curvature"] == pytest.approx(1 / r, rel=0.1)
        assert m["length"] == pytest.approx(math.pi * r, rel=1e-3)

    def test_single_point_path(self):
        m = path_metrics(seg_path([np.tile([1.0, 1.0], (4, 1))]))
        assert m["length"] == pytest.approx(0.0, abs=1e-12)
        assert m["max_curvature"] == pytest.approx(0.0, abs=1e-9)

    def test_menger_on_circle(self):
        th = np.linspace(0, 1, 20)
        pts = 3.0 * np.c_[np.cos(th), np.sin(th)]
        assert_allclose(menger_curvature(pts), 1 / 3.0, rtol=1e-9)

    def test_consensus_report_covers_reference_objectives(self):
        m = path_metrics(seg_path([np.array([[0, 0], [1, 2], [2, -1], [3, 0]], float)]))
        assert set(m["consensus"]) == {"dnorm1", "dnorm2", "ddiff1", "ddiff2", "ddiffvar0", "ddiffvar1"}


def demo_grid():
    return load_map(files("consensus_bezier") / "data" / "demo_map.txt", resolution=0.1)


class TestPipeline:
    def test_demo_map_plan(self):
        res = plan_on_grid(demo_grid(), (0.3, 0.3), (5.7, 3.7), objective=DDIFF2)
        assert len(res.chain) == len(res.path.segments) >= 2
        d = res.path.diagnostics
        assert d.kkt.ok and d.continuity <= 1e-6 and d.min_sampled_margin >= -1e-6

    def test_curves_stay_out_of_obstacle_cells(self):
        g = demo_grid()
        res = plan_on_grid(g, (0.3, 0.3), (5.7, 3.7))
        pts = res.path.polyline()
        cells = {g.world_to_cell(p) for p in pts}
        assert not any(g.is_occupied(c) for c in cells if g.in_bounds(c))

    def test_start_in_obstacle_names_cell(self):
        g = demo_grid()
        with pytest.raises(InputError, match=r"occupied cell \(row=0, col=0\)"):
            build_corridors(g, (0.05, 0.05), (5.7, 3.7))

    def test_start_outside_map(self):
        with pytest.raises(InputError, match="outside the map"):
            build_corridors(demo_grid(), (-1.0, 0.5), (5.7, 3.7))

    def test_walled_off_goal(self):
        occ = np.zeros((10, 10), bool)
        occ[:, 5] = True
        with pytest.raises(NoPathError):
            build_corridors(OccupancyGrid(occ, 0.1), (0.15, 0.15), (0.85, 0.85))

    def test_obstacle_free_map(self):
        g = OccupancyGrid(np.zeros((10, 20), bool), 0.1)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            res = plan_on_grid(g, (0.15, 0.15), (1.85, 0.85), objective=ObjectiveSpec(Family.DIFFERENCE_NORM, 1))
        assert res.path.diagnostics.kkt.ok

import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from consensus_bezier.corridor import (
    CorridorError,
    ObstacleSet,
    SafeCorridor,
    chain_corridors,
    clip_polygon,
    closest_point_in_interior,
    closest_point_on_polygon,
    grow_corridor,
    obstacles_from_grid,
    polygon_area,
)
from consensus_bezier.gridmap import NoPathError, OccupancyGrid, reference_path
from oracles import active_set_qp, square_meets_interior


def random_world(rng, size=15, density=0.2):
    occ = rng.uniform(size=(size, size)) < density
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    return OccupancyGrid(occ, resolution=0.1)


def assert_safe(S: SafeCorridor, obstacles: ObstacleSet):
    A, b = S.constraints()
    assert np.all(A @ S.center < b), "center must be strictly inside"
    for sq in obstacles.squares:
        assert not square_meets_interior(sq, A, b), f"square {sq.tolist()} meets the corridor"
    for p in obstacles.points:
        assert np.any(A @ p >= b)


class TestSingleCorridor:
    def test_point_obstacles(self):
        obs = ObstacleSet.from_points([[1.0, 0.0], [-2.0, 0.0], [0.0, 3.0], [5.0, 5.0]])
        S = grow_corridor([0.0, 0.0], obs)
        # the far point is already cut off by the first three planes
        assert_allclose(S.boundary_points, [[1.0, 0.0], [-2.0, 0.0], [0.0, 3.0]])
        assert_allclose(S.A, [[1.0, 0.0], [-2.0, 0.0], [0.0, 3.0]])
        assert_allclose(S.b, [1.0, 4.0, 9.0], rtol=1e-8)
        assert S.contains([0.5, 1.0])
        assert not S.contains([1.5, 0.0])

    def test_single_square_hyperplane(self):
        obs = ObstacleSet(np.array([[[2.0, -1.0], [3.0, 1.0]]]), np.empty((0, 2)))
        S = grow_corridor([0.0, 0.0], obs, margin=0.0)
        assert_allclose(S.boundary_points, [[2.0, 0.0]])
        assert_allclose(S.b, [4.0])

    def test_margin_pulls_faces_inward(self):
        obs = ObstacleSet.from_points([[1.0, 0.0]])
        S = grow_corridor([0.0, 0.0], obs, margin=1e-3)
        # unit normal offset: b / |a| = 1 - 1e-3
        assert S.b[0] / np.linalg.norm(S.A[0]) == pytest.approx(1.0 - 1e-3)

    def test_room_is_a_box(self):
        occ = np.zeros((7, 7), bool)
        occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
        g = OccupancyGrid(occ)
        obs = obstacles_from_grid(g)
        S = grow_corridor([3.5, 3.5], obs)
        assert len(S.b) == 4
        poly = S.polygon(g.extent)
        assert polygon_area(poly) == pytest.approx(25.0, rel=1e-6)
        assert_safe(S, obs)

    def test_no_obstacles(self):
        S = grow_corridor([1.0, 2.0], ObstacleSet.from_points(np.empty((0, 2))))
        assert len(S.b) == 0
        assert S.contains([1e6, -1e6])

    def test_center_in_collision(self):
        obs = ObstacleSet(np.array([[[0.0, 0.0], [1.0, 1.0]]]), np.empty((0, 2)))
        with pytest.raises(CorridorError, match="collision"):
            grow_corridor([0.5, 1.0], obs)

    def test_random_maps_are_safe(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            g = random_world(rng)
            obs = obstacles_from_grid(g)
            free = np.argwhere(~g.occupancy)
            for r, c in free[rng.choice(len(free), size=3, replace=False)]:
                S = grow_corridor(g.cell_center((r, c)) + rng.uniform(-0.04, 0.04, 2), obs)
                assert_safe(S, obs)

    def test_centers_near_cell_edges_are_safe(self):
        # nanometre offsets from cell edges produce thin slivers between faces
        rng = np.random.default_rng(99)
        offsets = [0.0, 0.05, -0.05, 1e-9, 3e-7, -2e-10]
        checked = 0
        for _ in range(40):
            g = random_world(rng, 20, rng.uniform(0.05, 0.4))
            obs = obstacles_from_grid(g, border=True)
            free = np.argwhere(~g.occupancy)
            for r, c in free[rng.choice(len(free), size=min(5, len(free)), replace=False)]:
                try:
                    S = grow_corridor(g.cell_center((r, c)) + rng.choice(offsets, 2), obs)
                except CorridorError:
                    continue
                assert_safe(S, obs)
                checked += 1
        assert checked > 100

    def test_touching_center_is_a_collision(self):
        obs = ObstacleSet(np.array([[[0.0, 0.0], [1.0, 1.0]]]), np.empty((0, 2)))
        with pytest.raises(CorridorError):
            grow_corridor([0.5, 1.0 + 1e-16], obs)
        assert len(grow_corridor([0.5, 1.0 + 1e-10], obs).b) == 1

    def test_grid_corner_center_terminates(self):
        # a center a few nanometres from a cell corner once made the growth cycle
        occ = np.zeros((40, 60), bool)
        occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
        obs = obstacles_from_grid(OccupancyGrid(occ, 0.1), border=True)
        S = grow_corridor([4.4000000059604645, 3.300000005960464], obs)
        assert_safe(S, obs)

    def test_json(self):
        S = grow_corridor([0.0, 0.0], ObstacleSet.from_points([[1.0, 1.0]]))
        doc = S.to_json()
        assert set(doc) == {"center", "boundary_points", "margin", "A", "b"}


class TestClosestPoint:
    def test_matches_qp_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            lo = rng.uniform(-3, 3, size=2)
            sq = np.array([lo, lo + rng.uniform(0.2, 2.0, size=2)])
            c = rng.uniform(-4, 4, size=2)
            if np.all((sq[0] <= c) & (c <= sq[1])):
                continue
            A = rng.normal(size=(2, 2))
            b = A @ c + rng.uniform(0.5, 3.0, size=2)
            x = closest_point_in_interior(c, ObstacleSet(sq[None], np.empty((0, 2))), A, b)
            box = np.vstack([np.eye(2), -np.eye(2)])
            ref = active_set_qp(
                2 * np.eye(2), -2 * c, np.zeros((0, 2)), np.zeros(0),
                np.vstack([box, A]), np.concatenate([sq[1], -sq[0], b]),
            )  # fmt: skip
            meets = square_meets_interior(sq, A, b)
            if not meets:
                assert x is None
            else:
                assert x is not None
                assert_allclose(x, ref, atol=1e-9)

    def test_polygon_helpers(self):
        sq = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]])
        half = clip_polygon(sq, np.array([1.0, 0.0]), 1.0)
        assert polygon_area(half) == pytest.approx(2.0)
        assert_allclose(closest_point_on_polygon(np.array([5.0, 1.0]), half), [1.0, 1.0])
        assert_allclose(closest_point_on_polygon(np.array([0.5, 0.5]), half), [0.5, 0.5])

    def test_tie_break_is_lexicographic(self):
        obs = ObstacleSet.from_points([[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]])
        x = closest_point_in_interior([0.0, 0.0], obs)
        assert_allclose(x, [-1.0, 0.0])


class TestChain:
    def test_obstacle_free_single_corridor(self):
        path = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]])
        ch = chain_corridors(path, ObstacleSet.from_points(np.empty((0, 2))))
        assert len(ch) == 1
        assert ch.anchors == (0.0,)

    def test_corridors_overlap_at_anchors(self):
        occ = np.zeros((12, 20), bool)
        occ[0:8, 6:8] = True
        occ[4:12, 13:15] = True
        g = OccupancyGrid(occ, resolution=0.1)
        obs = obstacles_from_grid(g, border=True)
        ref = reference_path(g, (1, 1), (10, 18))
        ch = chain_corridors(ref.points, obs, min_advance=0.1)
        assert len(ch) >= 2
        for k in range(1, len(ch)):
            anchor = ch.point_at(ch.anchors[k])
            assert ch.corridors[k - 1].contains(anchor)
            assert ch.corridors[k].contains(anchor)
        doc = ch.to_json()
        assert len(doc["corridors"]) == len(ch)

    def test_random_maps_cover_reference_path(self):
        rng = np.random.default_rng(21)
        done = 0
        while done < 8:
            g = random_world(rng, 15, 0.15)
            free = [tuple(v) for v in np.argwhere(~g.occupancy)]
            s, t = (free[i] for i in rng.choice(len(free), size=2, replace=False))
            try:
                ref = reference_path(g, s, t)
            except NoPathError:
                continue
            obs = obstacles_from_grid(g, border=True)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                ch = chain_corridors(ref.points, obs, min_advance=g.resolution)
            for k, S in enumerate(ch.corridors):
                assert_safe(S, obs)
                if len(ref.points) > 1:
                    sub = ch.subpath(k)
                    assert all(S.contains(p) for p in sub)
            done += 1

    def test_colliding_path_rejected(self):
        obs = ObstacleSet(np.array([[[0.4, -0.1], [0.6, 0.1]]]), np.empty((0, 2)))
        with pytest.raises(CorridorError, match="collision"):
            chain_corridors(np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]), obs)

    def test_single_point_path(self):
        ch = chain_corridors(np.array([[0.5, 0.5], [0.5, 0.5]]), ObstacleSet.from_points([[2.0, 2.0]]))
        assert len(ch) == 1

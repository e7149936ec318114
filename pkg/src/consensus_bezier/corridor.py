"""Convex polygonal safe corridors from separating hyperplanes.

A corridor around a center c is grown by repeatedly taking the obstacle
point closest to c that still lies in the corridor interior and adding the
half-plane through it facing c. Occupied grid cells are exact squares.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .gridmap import OccupancyGrid

TIE_TOL = 1e-12
# faces are pulled toward the center by this distance (meters), so
# obstacle slivers thinner than it are excluded exactly instead of refined forever
FACE_MARGIN = 1e-9
# centers closer than this to an obstacle count as touching it
CONTACT_TOL = 1e-12


class CorridorError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObstacleSet:
    squares: np.ndarray  # (K, 2, 2): row 0 = (xmin, ymin), row 1 = (xmax, ymax)
    points: np.ndarray  # (P, 2)

    def __post_init__(self):
        sq = np.asarray(self.squares, dtype=float).reshape(-1, 2, 2)
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if not (np.all(np.isfinite(sq)) and np.all(np.isfinite(pts))):
            raise ValueError("obstacle geometry must be finite")
        if np.any(sq[:, 1] < sq[:, 0]):
            raise ValueError("square obstacles need min <= max corners")
        object.__setattr__(self, "squares", sq)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points) -> ObstacleSet:
        return cls(np.empty((0, 2, 2)), np.asarray(points, dtype=float))

    @property
    def empty(self) -> bool:
        return len(self.squares) == 0 and len(self.points) == 0

    def distance(self, x) -> float:
        """Euclidean distance from x to the obstacle set (0 inside a square)."""
        x = np.asarray(x, dtype=float)
        d = np.inf
        if len(self.squares):
            q = np.clip(x, self.squares[:, 0], self.squares[:, 1])
            d = min(d, float(np.linalg.norm(q - x, axis=1).min()))
        if len(self.points):
            d = min(d, float(np.linalg.norm(self.points - x, axis=1).min()))
        return d


def obstacles_from_grid(grid: OccupancyGrid, border: bool = False) -> ObstacleSet:
    """Occupied cells as world-frame squares; ``border`` adds a ring of cells around the map."""
    occ = grid.occupancy
    if border:
        occ = np.pad(occ, 1, constant_values=True)
        offset = 1
    else:
        offset = 0
    rows, cols = np.nonzero(occ)
    res = grid.resolution
    lo = np.column_stack(
        [grid.origin[0] + (cols - offset) * res, grid.origin[1] + (rows - offset) * res]
    )
    squares = np.stack([lo, lo + res], axis=1)
    return ObstacleSet(squares, np.empty((0, 2)))


@dataclass(frozen=True)
class SafeCorridor:
    center: np.ndarray
    boundary_points: np.ndarray  # (m, 2), in insertion order
    margin: float = 0.0  # inward face offset in meters

    @property
    def A(self) -> np.ndarray:
        return self.boundary_points - self.center

    @property
    def b(self) -> np.ndarray:
        A = self.A
        b = np.einsum("ij,ij->i", A, self.boundary_points)
        if self.margin:
            r = np.linalg.norm(A, axis=1)
            b = b - np.minimum(self.margin, 0.5 * r) * r
        return b

    def constraints(self) -> tuple[np.ndarray, np.ndarray]:
        return corridor_constraints(self)

    def margins(self, x) -> np.ndarray:
        """Signed slack b - A x per face (nonnegative inside)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.b[None, :] - x @ self.A.T

    def contains(self, x, tol: float = 1e-9) -> bool:
        m = self.margins(x)
        return bool(np.all(m >= -tol * (1.0 + np.abs(self.b))))

    def polygon(self, bounds) -> np.ndarray:
        """Vertices of the corridor clipped to the box (xmin, xmax, ymin, ymax)."""
        x0, x1, y0, y1 = bounds
        poly = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
        for a, b in zip(self.A, self.b):
            poly = clip_polygon(poly, a, b)
            if len(poly) == 0:
                break
        return poly

    def to_json(self) -> dict:
        return {
            "center": self.center.tolist(),
            "boundary_points": self.boundary_points.tolist(),
            "margin": self.margin,
            "A": self.A.tolist(),
            "b": self.b.tolist(),
        }


def corridor_constraints(S: SafeCorridor) -> tuple[np.ndarray, np.ndarray]:
    """Linear inequality parameters: rows (x_i - c)^T and entries (x_i - c)^T x_i."""
    return S.A, S.b


def clip_polygon(poly: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
    """Intersection of a convex polygon with the closed half-plane a.x <= b."""
    if len(poly) == 0:
        return poly
    vals = poly @ a - b
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        vp, vq = vals[i], vals[(i + 1) % n]
        if vp <= 0:
            out.append(p)
        if (vp < 0 < vq) or (vq < 0 < vp):
            out.append(p + (vp / (vp - vq)) * (q - p))
    return np.array(out).reshape(-1, 2)


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    # shift to the first vertex so thin slivers do not cancel to zero
    d = poly - poly[0]
    x, y = d[:, 0], d[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _closest_on_segment(c, p, q):
    d = q - p
    dd = float(d @ d)
    if dd == 0.0:
        return p
    s = min(1.0, max(0.0, float((c - p) @ d) / dd))
    return p + s * d


def closest_point_on_polygon(c: np.ndarray, poly: np.ndarray) -> np.ndarray:
    if len(poly) >= 3:
        e = np.roll(poly, -1, axis=0) - poly
        cross = e[:, 0] * (c[1] - poly[:, 1]) - e[:, 1] * (c[0] - poly[:, 0])
        if np.all(cross >= 0) or np.all(cross <= 0):
            return np.asarray(c, dtype=float)
    best, best_key = None, None
    for i in range(len(poly)):
        x = _closest_on_segment(c, poly[i], poly[(i + 1) % len(poly)])
        key = float(np.sum((x - c) ** 2))
        if best is None or key < best_key:
            best, best_key = x, key
    return best


def _pick(cands: list[tuple[float, np.ndarray]]) -> np.ndarray | None:
    """Nearest candidate; equidistant ones resolve to the lexicographically smallest point."""
    if not cands:
        return None
    dmin = min(d for d, _ in cands)
    near = [x for d, x in cands if d <= dmin * (1.0 + TIE_TOL) + 1e-300]
    return min(near, key=lambda x: tuple(x))


class _Grower:
    """Mutable search state for one corridor; keeps obstacles that may still intersect it."""

    def __init__(self, c: np.ndarray, obstacles: ObstacleSet, margin: float = FACE_MARGIN):
        self.c = c
        self.margin = margin
        self.sq = obstacles.squares
        self.pts = obstacles.points
        self.sq_alive = np.ones(len(self.sq), dtype=bool)
        self.pt_alive = np.ones(len(self.pts), dtype=bool)
        self.A = np.empty((0, 2))
        self.b = np.empty(0)
        # per-face widening used by the kill tests; below the margin so a face always kills its own piece
        self.slack = np.empty(0)
        if len(self.sq):
            q = np.clip(c, self.sq[:, 0], self.sq[:, 1])
            self.sq_lb = np.linalg.norm(q - c, axis=1)
            self.sq_clamp = q
            if self.sq_lb.min() <= CONTACT_TOL:
                raise CorridorError(f"corridor center {c.tolist()} is in collision")
        if len(self.pts):
            if np.linalg.norm(self.pts - c, axis=1).min() <= CONTACT_TOL:
                raise CorridorError(f"corridor center {c.tolist()} coincides with an obstacle point")

    def _strictly_inside(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if len(self.b) == 0:
            return np.ones(len(x), dtype=bool)
        return np.all(x @ self.A.T < self.b, axis=1)

    def closest(self) -> np.ndarray | None:
        c = self.c
        cands = []
        if self.pt_alive.any():
            idx = np.flatnonzero(self.pt_alive)
            inside = self._strictly_inside(self.pts[idx])
            self.pt_alive[idx[~inside]] = False
            for i in idx[inside]:
                cands.append((float(np.linalg.norm(self.pts[i] - c)), self.pts[i]))
        if self.sq_alive.any():
            idx = np.flatnonzero(self.sq_alive)
            order = idx[np.argsort(self.sq_lb[idx], kind="stable")]
            best = min((d for d, _ in cands), default=np.inf)
            clamp_in = self._strictly_inside(self.sq_clamp[order])
            for i, fast in zip(order, clamp_in):
                lb = self.sq_lb[i]
                if lb > best * (1.0 + TIE_TOL):
                    break
                if fast:
                    x = self.sq_clamp[i]
                else:
                    x = self._clipped_closest(i)
                    if x is None:
                        self.sq_alive[i] = False
                        continue
                d = float(np.linalg.norm(x - c))
                cands.append((d, x))
                best = min(best, d)
        return _pick(cands)

    def _clipped_closest(self, i: int) -> np.ndarray | None:
        (x0, y0), (x1, y1) = self.sq[i]
        poly = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
        for a, b, e in zip(self.A, self.b, self.slack):
            poly = clip_polygon(poly, a, b + e)
            if len(poly) < 3:
                return None
        if polygon_area(poly) <= 0.0:
            return None
        return closest_point_on_polygon(self.c, poly)

    def push(self, a: np.ndarray, b: float, slack: float = 0.0) -> None:
        self.A = np.vstack([self.A, a])
        self.b = np.append(self.b, b)
        self.slack = np.append(self.slack, slack)

    def add(self, x: np.ndarray) -> None:
        a = x - self.c
        r = float(np.linalg.norm(a))
        # capped so the center stays strictly inside when it nearly touches an obstacle
        off = min(self.margin, 0.5 * r) * r
        b = float(a @ x) - off
        e = 0.5 * off
        self.push(a, b, e)
        if len(self.sq):
            lo, hi = self.sq[:, 0], self.sq[:, 1]
            # smallest value of a.x over each square, attained at a corner
            low = np.where(a >= 0, lo, hi) @ a
            self.sq_alive &= low < b + e
        if len(self.pts):
            self.pt_alive &= self.pts @ a < b + e


def closest_point_in_interior(c, obstacles: ObstacleSet, A=None, b=None) -> np.ndarray | None:
    """Obstacle point nearest to c among those strictly inside {x : A x < b}."""
    g = _Grower(np.asarray(c, dtype=float), obstacles)
    if A is not None and len(A):
        for row, rhs in zip(np.asarray(A, float), np.asarray(b, float)):
            g.push(row, float(rhs))
    return g.closest()


def grow_corridor(
    c, obstacles: ObstacleSet, max_iter: int | None = None, margin: float = FACE_MARGIN
) -> SafeCorridor:
    c = np.asarray(c, dtype=float)
    g = _Grower(c, obstacles, margin)
    cap = max_iter if max_iter is not None else len(obstacles.squares) + len(obstacles.points) + 8
    X = []
    while True:
        x = g.closest()
        if x is None:
            break
        if len(X) >= cap:
            raise CorridorError(f"corridor growth at {c.tolist()} exceeded {cap} iterations")
        X.append(np.array(x, dtype=float))
        g.add(X[-1])
    return SafeCorridor(c.copy(), np.array(X).reshape(-1, 2), margin)


@dataclass(frozen=True)
class CorridorChain:
    corridors: tuple[SafeCorridor, ...]
    anchors: tuple[float, ...]  # normalized arc-length parameters, anchors[0] = 0
    path: np.ndarray  # reference polyline

    def __len__(self) -> int:
        return len(self.corridors)

    @property
    def arclength(self) -> np.ndarray:
        return _cumlength(self.path)

    def point_at(self, t: float) -> np.ndarray:
        return _point_at(self.path, self.arclength, t * self.arclength[-1])

    def subpath(self, k: int) -> np.ndarray:
        """Reference polyline between anchor k and the next anchor (or the path end)."""
        t0 = self.anchors[k]
        t1 = self.anchors[k + 1] if k + 1 < len(self.anchors) else 1.0
        cum = self.arclength
        L = cum[-1]
        s0, s1 = t0 * L, t1 * L
        inner = [self.path[i] for i in range(len(self.path)) if s0 < cum[i] < s1]
        return np.array([_point_at(self.path, cum, s0), *inner, _point_at(self.path, cum, s1)])

    def to_json(self) -> dict:
        return {
            "anchors": list(self.anchors),
            "reference_path": self.path.tolist(),
            "corridors": [S.to_json() for S in self.corridors],
        }


def _cumlength(path: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(path, axis=0), axis=1))])


def _point_at(path: np.ndarray, cum: np.ndarray, s: float) -> np.ndarray:
    if s <= 0:
        return path[0].copy()
    if s >= cum[-1]:
        return path[-1].copy()
    j = int(np.searchsorted(cum, s, side="right"))
    seg = cum[j] - cum[j - 1]
    w = (s - cum[j - 1]) / seg if seg > 0 else 0.0
    return path[j - 1] + w * (path[j] - path[j - 1])


def _dedupe(path: np.ndarray) -> np.ndarray:
    keep = [0]
    for i in range(1, len(path)):
        if np.any(path[i] != path[keep[-1]]):
            keep.append(i)
    return path[keep]


def chain_corridors(
    ref_path,
    obstacles: ObstacleSet,
    min_advance: float | None = None,
    contain_tol: float = 1e-9,
) -> CorridorChain:
    """Corridors anchored along a reference polyline.

    Each new anchor is the furthest path point whose sub-path from the
    previous anchor stays inside the previous corridor.
    """
    path = _dedupe(np.asarray(ref_path, dtype=float).reshape(-1, 2))
    for i, p in enumerate(path):
        if obstacles.distance(p) <= 0.0:
            raise CorridorError(f"reference path vertex {i} at {p.tolist()} is in collision")
    cum = _cumlength(path)
    L = cum[-1]
    if L == 0.0:
        return CorridorChain((grow_corridor(path[0], obstacles),), (0.0,), path)
    if min_advance is None:
        min_advance = float(np.diff(cum).min())
    tol_s = 1e-9 * L

    corridors, anchors = [], []
    s = 0.0
    while True:
        S = grow_corridor(_point_at(path, cum, s), obstacles)
        corridors.append(S)
        anchors.append(s / L)
        s_next = _advance(S, path, cum, s, contain_tol, tol_s)
        if s_next >= L:
            break
        if s_next - s < min_advance:
            j = int(np.searchsorted(cum, s + tol_s, side="right"))
            forced = cum[min(j, len(cum) - 1)]
            warnings.warn(
                f"corridor {len(corridors) - 1}: anchor advanced only {s_next - s:.3g}; "
                f"forcing advance to path vertex {min(j, len(cum) - 1)}",
                RuntimeWarning,
                stacklevel=2,
            )
            if forced <= s:
                raise CorridorError(f"corridor {len(corridors) - 1}: anchor failed to advance")
            s_next = forced
            if s_next >= L:
                break
        s = s_next
    return CorridorChain(tuple(corridors), tuple(anchors), path)


def _advance(S: SafeCorridor, path, cum, s: float, tol: float, tol_s: float) -> float:
    """Largest arc length s' >= s such that path[s, s'] lies in S."""
    j = int(np.searchsorted(cum, s, side="right"))  # first vertex strictly after s
    while j < len(path) and S.contains(path[j], tol):
        j += 1
    if j == len(path):
        return cum[-1]
    lo = max(s, cum[j - 1])
    hi = cum[j]
    # the corridor is convex, so its intersection with the segment is an interval
    while hi - lo > tol_s:
        mid = 0.5 * (lo + hi)
        if S.contains(_point_at(path, cum, mid), tol):
            lo = mid
        else:
            hi = mid
    return lo

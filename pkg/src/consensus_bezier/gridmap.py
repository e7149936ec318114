"""Occupancy grids, exact distance fields and maximal-clearance path search.

Cells are addressed as (row, col) with row 0 at the bottom of the map
(lowest y). Map files list rows top to bottom, so loaders flip them.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SQRT2 = math.sqrt(2.0)
NEIGHBORS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1),           (0, 1),
    (1, -1),  (1, 0),  (1, 1),
)  # fmt: skip


class MapFormatError(ValueError):
    pass


class NoPathError(RuntimeError):
    pass


@dataclass(frozen=True)
class OccupancyGrid:
    occupancy: np.ndarray  # bool, shape (height, width), True = occupied
    resolution: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=bool)
        if occ.ndim != 2 or occ.shape[0] < 1 or occ.shape[1] < 1:
            raise ValueError(f"occupancy must be a nonempty 2-D array, got shape {occ.shape}")
        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return (x0, x0 + self.width * self.resolution, y0, y0 + self.height * self.resolution)

    def in_bounds(self, cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def is_occupied(self, cell) -> bool:
        return bool(self.occupancy[cell[0], cell[1]])

    def cell_center(self, cell) -> np.ndarray:
        r, c = cell
        return np.array(
            [self.origin[0] + (c + 0.5) * self.resolution, self.origin[1] + (r + 0.5) * self.resolution]
        )

    def world_to_cell(self, point) -> tuple[int, int]:
        x, y = point
        c = int(math.floor((x - self.origin[0]) / self.resolution))
        r = int(math.floor((y - self.origin[1]) / self.resolution))
        return r, c

    def with_obstacle(self, cell) -> OccupancyGrid:
        occ = self.occupancy.copy()
        occ[cell[0], cell[1]] = True
        return OccupancyGrid(occ, self.resolution, self.origin)


def _parse_text(text: str) -> np.ndarray:
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    if not rows:
        raise MapFormatError("text map is empty")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise MapFormatError(f"text map row {i} has {len(row)} cells, expected {width}")
        bad = set(row) - {"0", "1"}
        if bad:
            raise MapFormatError(f"text map row {i} contains invalid characters {sorted(bad)}")
    return np.array([[ch == "1" for ch in row] for row in rows], dtype=bool)


def _pgm_tokens(data: bytes, count: int, pos: int) -> tuple[list[int], int]:
    out = []
    while len(out) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MapFormatError("truncated PGM header")
        try:
            out.append(int(data[start:pos]))
        except ValueError as exc:
            raise MapFormatError(f"bad PGM token {data[start:pos]!r}") from exc
    return out, pos


def _parse_pgm(data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise MapFormatError(f"not a PGM file (magic {magic!r})")
    (width, height, maxval), pos = _pgm_tokens(data, 3, 2)
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise MapFormatError(f"bad PGM header {width}x{height} maxval={maxval}")
    if magic == b"P2":
        values, _ = _pgm_tokens(data, width * height, pos)
        pixels = np.array(values, dtype=np.int64)
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        need = width * height * dtype.itemsize
        raw = data[pos : pos + need]
        if len(raw) != need:
            raise MapFormatError(f"PGM raster truncated: {len(raw)} of {need} bytes")
        pixels = np.frombuffer(raw, dtype=dtype).astype(np.int64)
    # dark pixels are obstacles
    return (pixels.reshape(height, width) < 128)


def load_map(path, fmt: str | None = None, resolution: float = 1.0, origin=(0.0, 0.0)) -> OccupancyGrid:
    """Read a text (0/1 rows) or PGM occupancy map; the first file row is the top of the map."""
    path = Path(path)
    if fmt is None:
        fmt = "pgm" if path.suffix.lower() == ".pgm" else "text"
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise MapFormatError(f"cannot read map {path}: {exc}") from exc
    if fmt == "text":
        try:
            occ = _parse_text(data.decode("ascii"))
        except UnicodeDecodeError as exc:
            raise MapFormatError(f"text map {path} is not ASCII") from exc
    elif fmt == "pgm":
        occ = _parse_pgm(data)
    else:
        raise MapFormatError(f"unknown map format {fmt!r}")
    return OccupancyGrid(np.flipud(occ), resolution, origin)


def dump_text_map(grid: OccupancyGrid) -> str:
    return "\n".join("".join("1" if v else "0" for v in row) for row in np.flipud(grid.occupancy)) + "\n"


def _edt_1d(f: np.ndarray) -> np.ndarray:
    """Lower envelope of parabolas: d(q) = min_p (q - p)^2 + f(p)."""
    n = f.shape[0]
    d = np.empty(n)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = 0
    # skip leading infinite samples; they never form the envelope
    finite = np.flatnonzero(np.isfinite(f))
    if finite.size == 0:
        d[:] = np.inf
        return d
    v[0] = finite[0]
    z[0] = -np.inf
    z[1] = np.inf
    for q in finite[1:]:
        while True:
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p))
            if s > z[k]:
                break
            k -= 1  # z[0] = -inf stops this at k = 0
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def squared_distance_cells(occupancy: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance (in cells) from each cell to the nearest occupied cell."""
    occ = np.asarray(occupancy, dtype=bool)
    f = np.where(occ, 0.0, np.inf)
    tmp = np.empty_like(f)
    for c in range(occ.shape[1]):
        tmp[:, c] = _edt_1d(f[:, c])
    out = np.empty_like(f)
    for r in range(occ.shape[0]):
        out[r, :] = _edt_1d(tmp[r, :])
    return out


@dataclass(frozen=True)
class DistanceField:
    grid: OccupancyGrid
    dist: np.ndarray  # meters; +inf everywhere on an obstacle-free map

    @property
    def obstacle_free(self) -> bool:
        return bool(np.isinf(self.dist).all())

    def visiting_cost(self, cell) -> float:
        """Inverse clearance 1/dist2coll; +inf (impassable) on occupied cells."""
        if not self.grid.in_bounds(cell):
            raise IndexError(f"cell {cell} outside {self.grid.height}x{self.grid.width} grid")
        d = self.dist[cell[0], cell[1]]
        if d == 0:
            return math.inf
        return 1.0 / d

    def cost_map(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 1.0 / self.dist


def distance_field(grid: OccupancyGrid) -> DistanceField:
    d2 = squared_distance_cells(grid.occupancy)
    dist = np.sqrt(d2) * grid.resolution
    dist.setflags(write=False)
    return DistanceField(grid, dist)


@dataclass(frozen=True)
class GridPath:
    cells: tuple[tuple[int, int], ...]
    points: np.ndarray  # cell centers, world coordinates
    cost: float
    clearances: np.ndarray = field(repr=False)

    @property
    def min_clearance(self) -> float:
        return float(self.clearances.min())

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


def edge_cost(field: DistanceField, a, b, length_weighted: bool = True) -> float:
    """Transition cost between adjacent cells: step length times the larger visiting cost."""
    step = (SQRT2 if a[0] != b[0] and a[1] != b[1] else 1.0) * field.grid.resolution
    ca = field.visiting_cost(a)
    cb = field.visiting_cost(b)
    c = max(ca, cb)
    if c == 0.0:
        # obstacle-free map: every visiting cost is 1/inf = 0, fall back to length
        return step
    return step * c if length_weighted else c


def neighbors(grid: OccupancyGrid, cell):
    """Free 8-neighbors; diagonal moves may not cut an occupied corner."""
    r, c = cell
    occ = grid.occupancy
    for dr, dc in NEIGHBORS:
        nr, nc = r + dr, c + dc
        if not (0 <= nr < grid.height and 0 <= nc < grid.width) or occ[nr, nc]:
            continue
        if dr and dc and (occ[r + dr, c] or occ[r, c + dc]):
            continue
        yield nr, nc


def reference_path(
    grid: OccupancyGrid,
    start,
    goal,
    length_weighted: bool = True,
    field: DistanceField | None = None,
) -> GridPath:
    """Minimum-cost 8-connected path under the inverse-distance cost map (Dijkstra).

    Among equal-cost frontier entries the lexicographically smallest
    (row, col) is expanded first.
    """
    start = tuple(int(v) for v in start)
    goal = tuple(int(v) for v in goal)
    for name, cell in (("start", start), ("goal", goal)):
        if not grid.in_bounds(cell):
            raise ValueError(f"{name} cell {cell} is outside the map")
        if grid.is_occupied(cell):
            raise ValueError(f"{name} cell {cell} is occupied")
    field = field or distance_field(grid)

    best = {start: 0.0}
    parent = {start: None}
    heap = [(0.0, start[0], start[1])]
    done = set()
    while heap:
        d, r, c = heapq.heappop(heap)
        cell = (r, c)
        if cell in done:
            continue
        done.add(cell)
        if cell == goal:
            break
        for nb in neighbors(grid, cell):
            if nb in done:
                continue
            nd = d + edge_cost(field, cell, nb, length_weighted)
            if nd < best.get(nb, math.inf):
                best[nb] = nd
                parent[nb] = cell
                heapq.heappush(heap, (nd, nb[0], nb[1]))
    if goal not in done:
        raise NoPathError(f"no reference path from {start} to {goal}: goal is not reachable")

    cells = [goal]
    while parent[cells[-1]] is not None:
        cells.append(parent[cells[-1]])
    cells.reverse()
    points = np.array([grid.cell_center(cell) for cell in cells])
    clear = np.array([field.dist[cell] for cell in cells])
    return GridPath(tuple(cells), points, float(best[goal]), clear)

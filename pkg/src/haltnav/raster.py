"""Occupancy rasters of area polygons and 8-connected grid A*.

Frames are aligned to integer multiples of the resolution so that rasters
of neighbouring areas (and the per-level union raster) share cell edges.
Cell ``(col, row)`` spans ``[ox + col*res, ox + (col+1)*res)`` in x, with
rows growing along +y.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from haltnav import geometry as geo
from haltnav.geometry import Point

SQRT2 = math.sqrt(2.0)
DEFAULT_RESOLUTION = 0.05
_TOUCH_EPS = 1e-9
# absorbs float noise in (x - ox) / res so points on cell edges land deterministically
_FLOOR_NUDGE = 1e-9

Cell = tuple[int, int]  # (col, row)


class RasterError(ValueError):
    pass


class DegeneratePolygon(RasterError):
    pass


class ResolutionTooCoarse(RasterError):
    pass


class OutOfBounds(ValueError):
    pass


class NoPath(RuntimeError):
    pass


class CellOccupied(ValueError):
    pass


@dataclass(eq=False)
class OccupancyGrid:
    origin: Point
    resolution: float
    width: int
    height: int
    cells: np.ndarray  # bool (height, width); True = occupied
    openings: dict = field(default_factory=dict)  # passage id -> list of cells

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.cells = np.ascontiguousarray(self.cells, dtype=bool)
        if self.cells.shape != (self.height, self.width):
            raise ValueError(f"cells shape {self.cells.shape} != ({self.height}, {self.width})")
        self.cells.setflags(write=False)
        self._flat = self.cells.tobytes()

    @classmethod
    def empty(cls, width: int, height: int, resolution: float = 0.1, origin=Point(0.0, 0.0)):
        return cls(origin, resolution, width, height, np.zeros((height, width), dtype=bool))

    def in_bounds(self, cell: Cell) -> bool:
        c, r = cell
        return 0 <= c < self.width and 0 <= r < self.height

    def occupied(self, cell: Cell) -> bool:
        c, r = cell
        return self._flat[r * self.width + c] != 0

    def free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.occupied(cell)

    def free_at(self, x: float, y: float) -> bool:
        c = math.floor((x - self.origin.x) / self.resolution + _FLOOR_NUDGE)
        r = math.floor((y - self.origin.y) / self.resolution + _FLOOR_NUDGE)
        if not (0 <= c < self.width and 0 <= r < self.height):
            return False
        return self._flat[r * self.width + c] == 0

    def cell_rect(self, cell: Cell) -> tuple[float, float, float, float]:
        c, r = cell
        x0 = self.origin.x + c * self.resolution
        y0 = self.origin.y + r * self.resolution
        return x0, y0, x0 + self.resolution, y0 + self.resolution

    def free_count(self) -> int:
        return int((~self.cells).sum())

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.origin == other.origin
            and self.resolution == other.resolution
            and self.width == other.width
            and self.height == other.height
            and np.array_equal(self.cells, other.cells)
        )


@dataclass(frozen=True)
class GridPath:
    cells: tuple[Cell, ...]
    cost: float

    def world_points(self, grid: OccupancyGrid) -> list[Point]:
        return [cell_to_world(grid, c) for c in self.cells]


def world_to_cell(grid: OccupancyGrid, p) -> Cell:
    x, y = (p.x, p.y) if isinstance(p, Point) else p
    c = math.floor((x - grid.origin.x) / grid.resolution + _FLOOR_NUDGE)
    r = math.floor((y - grid.origin.y) / grid.resolution + _FLOOR_NUDGE)
    if not (0 <= c < grid.width and 0 <= r < grid.height):
        raise OutOfBounds(f"({x}, {y}) outside grid")
    return (c, r)


def cell_to_world(grid: OccupancyGrid, cell: Cell) -> Point:
    if not grid.in_bounds(cell):
        raise OutOfBounds(f"cell {cell} outside {grid.width}x{grid.height} grid")
    c, r = cell
    return Point(
        grid.origin.x + (c + 0.5) * grid.resolution,
        grid.origin.y + (r + 0.5) * grid.resolution,
        grid.origin.level,
    )


# -- rasterization -------------------------------------------------------------


@dataclass(frozen=True)
class Frame:
    col0: int
    row0: int
    width: int
    height: int
    resolution: float
    level: int = 0

    @classmethod
    def around(cls, bbox, resolution: float, level: int = 0, margin: int = 1) -> "Frame":
        x0, y0, x1, y1 = bbox
        col0 = math.floor(x0 / resolution) - margin
        row0 = math.floor(y0 / resolution) - margin
        col1 = math.floor(x1 / resolution) + margin
        row1 = math.floor(y1 / resolution) + margin
        return cls(col0, row0, col1 - col0 + 1, row1 - row0 + 1, resolution, level)

    @property
    def origin(self) -> Point:
        return Point(self.col0 * self.resolution, self.row0 * self.resolution, self.level)

    def centers(self):
        res = self.resolution
        xs = (self.col0 + np.arange(self.width) + 0.5) * res
        ys = (self.row0 + np.arange(self.height) + 0.5) * res
        return np.meshgrid(xs, ys)


def _even_odd(frame: Frame, ring: Sequence[tuple[float, float]]) -> np.ndarray:
    X, Y = frame.centers()
    inside = np.zeros(X.shape, dtype=bool)
    n = len(ring)
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        if y0 == y1:
            continue
        straddle = (y0 > Y) != (y1 > Y)
        xc = x0 + (Y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= straddle & (X < xc)
    return inside


def segment_cells(frame: Frame, a, b) -> np.ndarray:
    """Mask of cells whose closed square touches segment ab (Liang-Barsky clip)."""
    res = frame.resolution
    (ax, ay), (bx, by) = a, b
    c_lo = max(math.floor(min(ax, bx) / res) - frame.col0 - 1, 0)
    c_hi = min(math.floor(max(ax, bx) / res) - frame.col0 + 1, frame.width - 1)
    r_lo = max(math.floor(min(ay, by) / res) - frame.row0 - 1, 0)
    r_hi = min(math.floor(max(ay, by) / res) - frame.row0 + 1, frame.height - 1)
    mask = np.zeros((frame.height, frame.width), dtype=bool)
    if c_lo > c_hi or r_lo > r_hi:
        return mask
    cols = np.arange(c_lo, c_hi + 1)
    rows = np.arange(r_lo, r_hi + 1)
    C, R = np.meshgrid(cols, rows)
    xmin = (frame.col0 + C) * res - _TOUCH_EPS
    xmax = (frame.col0 + C + 1) * res + _TOUCH_EPS
    ymin = (frame.row0 + R) * res - _TOUCH_EPS
    ymax = (frame.row0 + R + 1) * res + _TOUCH_EPS
    dx, dy = bx - ax, by - ay
    t0 = np.zeros(C.shape)
    t1 = np.ones(C.shape)
    ok = np.ones(C.shape, dtype=bool)
    for p, q in ((-dx, ax - xmin), (dx, xmax - ax), (-dy, ay - ymin), (dy, ymax - ay)):
        if p == 0.0:
            ok &= q >= 0.0
        else:
            t = q / p
            if p < 0:
                t0 = np.maximum(t0, t)
            else:
                t1 = np.minimum(t1, t)
    ok &= t0 <= t1
    mask[r_lo : r_hi + 1, c_lo : c_hi + 1] = ok
    return mask


def _inflate(occ: np.ndarray, radius: float, res: float) -> np.ndarray:
    k = int(math.ceil(radius / res))
    if k <= 0:
        return occ
    out = occ.copy()
    H, W = occ.shape
    for dr in range(-k, k + 1):
        for dc in range(-k, k + 1):
            if (dr == 0 and dc == 0) or math.hypot(dr, dc) * res > radius + _TOUCH_EPS:
                continue
            src = occ[max(0, -dr) : H - max(0, dr), max(0, -dc) : W - max(0, dc)]
            out[max(0, dr) : H - max(0, -dr), max(0, dc) : W - max(0, -dc)] |= src
    return out


def _raster_in_frame(area, passages, frame: Frame, inflation: float):
    ring = area.ring
    distinct = {(round(x, 9), round(y, 9)) for x, y in ring}
    if len(distinct) < 3:
        raise DegeneratePolygon(f"area {area.id} has {len(distinct)} distinct vertices")
    occ = ~_even_odd(frame, ring)
    n = len(ring)
    for i in range(n):
        occ |= segment_cells(frame, ring[i], ring[(i + 1) % n])
    openings = {}
    for p in passages:
        if area.id not in p.areas:
            raise ValueError(f"passage {p.id} is not incident to area {area.id}")
        if p.width < frame.resolution:
            raise ResolutionTooCoarse(
                f"passage {p.id} width {p.width:.3f} m below resolution {frame.resolution} m"
            )
        m = segment_cells(frame, *p.segment())
        occ &= ~m
        openings[p.id] = m
    if inflation > 0:
        occ = _inflate(occ, inflation, frame.resolution)
    cells = {}
    for pid, m in openings.items():
        rows, cols = np.nonzero(m & ~occ)
        if len(rows) == 0:
            raise ResolutionTooCoarse(f"passage {pid} opening has no free cells")
        cells[pid] = [(int(c), int(r)) for r, c in zip(rows, cols)]
    return occ, cells


def rasterize_area(area, passages: Iterable, resolution: float = DEFAULT_RESOLUTION,
                   inflation: float = 0.0) -> OccupancyGrid:
    """Occupancy grid of one area with its passages carved open as doorways."""
    passages = list(passages)
    frame = Frame.around(area.bbox(), resolution, area.level)
    occ, openings = _raster_in_frame(area, passages, frame, inflation)
    return OccupancyGrid(frame.origin, resolution, frame.width, frame.height, occ, openings)


def rasterize_level(graph, level: int, resolution: float = DEFAULT_RESOLUTION,
                    inflation: float = 0.0) -> OccupancyGrid:
    """Union raster of every area on one level: a cell is free if free in any area."""
    frame = Frame.around(graph.bounds(level), resolution, level)
    free = np.zeros((frame.height, frame.width), dtype=bool)
    openings: dict = {}
    for area in graph.areas.values():
        if area.level != level:
            continue
        sub = Frame.around(area.bbox(), resolution, level)
        occ, cells = _raster_in_frame(area, graph.passages_of(area.id), sub, inflation)
        dc, dr = sub.col0 - frame.col0, sub.row0 - frame.row0
        free[dr : dr + sub.height, dc : dc + sub.width] |= ~occ
        for pid, cs in cells.items():
            openings.setdefault(pid, set()).update((c + dc, r + dr) for c, r in cs)
    openings = {k: sorted(v, key=lambda cr: (cr[1], cr[0])) for k, v in openings.items()}
    return OccupancyGrid(frame.origin, resolution, frame.width, frame.height, ~free, openings)


def nearest_free_cell(grid: OccupancyGrid, p) -> Cell:
    """Free cell whose center is closest to ``p``; ties go to the lowest (row, col)."""
    x, y = (p.x, p.y) if isinstance(p, Point) else p
    free = ~grid.cells
    if not free.any():
        raise NoPath("grid has no free cells")
    res = grid.resolution
    xs = grid.origin.x + (np.arange(grid.width) + 0.5) * res
    ys = grid.origin.y + (np.arange(grid.height) + 0.5) * res
    d2 = (xs[None, :] - x) ** 2 + (ys[:, None] - y) ** 2
    d2 = np.where(free, d2, np.inf)
    r, c = divmod(int(np.argmin(d2)), grid.width)
    return (c, r)


def anchor_cell(grid: OccupancyGrid, passage) -> Cell:
    return nearest_free_cell(grid, passage.midpoint)


# -- search ---------------------------------------------------------------------

_NEIGHBOURS = (
    (1, 0, False), (-1, 0, False), (0, 1, False), (0, -1, False),
    (1, 1, True), (1, -1, True), (-1, 1, True), (-1, -1, True),
)


def path_cost(cells: Sequence[Cell], resolution: float) -> float:
    """Length of an 8-connected cell path: straight steps ``res``, diagonals ``res*sqrt2``."""
    straight = diag = 0
    for (c0, r0), (c1, r1) in zip(cells, cells[1:]):
        if c0 != c1 and r0 != r1:
            diag += 1
        else:
            straight += 1
    return straight * resolution + diag * (resolution * SQRT2)


def grid_astar(grid: OccupancyGrid, start: Cell, goal: Cell) -> GridPath:
    """Minimal-cost 8-connected path with the octile heuristic and no corner cutting."""
    for name, cell in (("start", start), ("goal", goal)):
        if not grid.in_bounds(cell):
            raise OutOfBounds(f"{name} cell {cell} outside grid")
        if grid.occupied(cell):
            raise CellOccupied(f"{name} cell {cell} is occupied")
    W, H = grid.width, grid.height
    occ = grid._flat
    s_idx = start[1] * W + start[0]
    g_idx = goal[1] * W + goal[0]
    if s_idx == g_idx:
        return GridPath((start,), 0.0)
    gc, gr = goal
    # unit-step costs; scaled by resolution at the end
    k = SQRT2 - 2.0

    def h(c, r):
        dx = abs(c - gc)
        dy = abs(r - gr)
        return dx + dy + k * (dx if dx < dy else dy)

    g = {s_idx: 0.0}
    came = {s_idx: -1}
    closed = bytearray(W * H)
    heap = [(h(*start), 0.0, s_idx)]
    pop, push = heapq.heappop, heapq.heappush
    found = False
    while heap:
        _, gcur, idx = pop(heap)
        if closed[idx]:
            continue
        closed[idx] = 1
        if idx == g_idx:
            found = True
            break
        r, c = divmod(idx, W)
        for dc, dr, diag in _NEIGHBOURS:
            nc, nr = c + dc, r + dr
            if nc < 0 or nr < 0 or nc >= W or nr >= H:
                continue
            nidx = nr * W + nc
            if occ[nidx] or closed[nidx]:
                continue
            if diag and (occ[r * W + nc] or occ[nr * W + c]):
                continue
            ng = gcur + (SQRT2 if diag else 1.0)
            if ng < g.get(nidx, math.inf):
                g[nidx] = ng
                came[nidx] = idx
                push(heap, (ng + h(nc, nr), ng, nidx))
    if not found:
        raise NoPath(f"no path from {start} to {goal}")
    cells = []
    idx = g_idx
    while idx != -1:
        r, c = divmod(idx, W)
        cells.append((c, r))
        idx = came[idx]
    cells.reverse()
    return GridPath(tuple(cells), path_cost(cells, grid.resolution))


def segment_free(grid: OccupancyGrid, a, b, spacing: float | None = None) -> bool:
    """True if every sample along ab (ends included) lies in a free cell."""
    ax, ay = a
    bx, by = b
    spacing = spacing or grid.resolution / 4.0
    n = max(1, int(math.ceil(math.hypot(bx - ax, by - ay) / spacing)))
    for i in range(n + 1):
        t = i / n
        if not grid.free_at(ax + t * (bx - ax), ay + t * (by - ay)):
            return False
    return True


def to_pgm(grid: OccupancyGrid) -> bytes:
    """Binary PGM (P5): occupied = 0, free = 255, top row = largest y."""
    img = np.where(grid.cells, 0, 255).astype(np.uint8)[::-1]
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    return header + img.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)

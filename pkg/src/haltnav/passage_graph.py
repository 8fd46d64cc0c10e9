"""Passage-level cost graph: the planner's belief about which connections are open.

Vertices are passages. Two passages are joined through every area they
share, weighted by the grid A* distance between their anchor cells on that
area's raster. Blocking a passage removes the vertex; blocking an area
removes every edge routed through it.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from itertools import combinations

from haltnav import raster
from haltnav.geometry import Point
from haltnav.osmag import AreaGraph, UnknownArea, UnknownPassage, locate

log = logging.getLogger(__name__)

INF = math.inf
_GOAL = ("", "")


class NoRoute(RuntimeError):
    pass


class StartInBlockedArea(NoRoute):
    pass


class UnlocatedPoint(ValueError):
    pass


class RasterFailure(RuntimeError):
    def __init__(self, area_id: str, cause: Exception):
        self.area_id = area_id
        super().__init__(f"area {area_id}: {cause}")


@dataclass(frozen=True)
class Route:
    areas: tuple[str, ...]
    passage_sequence: tuple[str, ...]
    total_cost: float
    leg_costs: tuple[float, ...]
    start: Point
    goal: Point

    @property
    def waypoints(self) -> list[str]:
        """Area and passage ids interleaved: area, passage, area, ..., area."""
        out = [self.areas[0]]
        for p, a in zip(self.passage_sequence, self.areas[1:]):
            out += [p, a]
        return out

    def to_dict(self) -> dict:
        return {
            "areas": list(self.areas),
            "passages": list(self.passage_sequence),
            "total_cost": self.total_cost,
        }


class PassageGraph:
    def __init__(self, source: AreaGraph, resolution: float, grids, anchors, area_costs,
                 inflation: float = 0.0):
        self.source = source
        self.resolution = resolution
        self.inflation = inflation
        self.grids: dict[str, raster.OccupancyGrid] = grids
        self.anchors: dict[tuple[str, str], raster.Cell] = anchors
        # pristine per-area costs keyed (area, p_i, p_j) with p_i < p_j; never mutated
        self._area_costs: dict[tuple[str, str, str], float] = area_costs
        self.passages: list[str] = sorted(source.passages)
        self.blocked_passages: set[str] = set()
        self.blocked_areas: set[str] = set()
        self._leg_cache: dict = {}

    # -- belief state ----------------------------------------------------------

    def copy(self) -> "PassageGraph":
        """Fresh belief sharing the immutable pristine data."""
        pg = PassageGraph(self.source, self.resolution, self.grids, self.anchors,
                          self._area_costs, self.inflation)
        pg.blocked_passages = set(self.blocked_passages)
        pg.blocked_areas = set(self.blocked_areas)
        pg._leg_cache = self._leg_cache
        return pg

    def reset(self) -> "PassageGraph":
        self.blocked_passages.clear()
        self.blocked_areas.clear()
        return self

    def invalidate_passage(self, passage_id: str) -> "PassageGraph":
        if passage_id not in self.source.passages:
            raise UnknownPassage(passage_id)
        self.blocked_passages.add(passage_id)
        return self

    def invalidate_area(self, area_id: str) -> "PassageGraph":
        if area_id not in self.source.areas:
            raise UnknownArea(area_id)
        self.blocked_areas.add(area_id)
        return self

    # -- costs -----------------------------------------------------------------

    def area_cost(self, area_id: str, pi: str, pj: str) -> float:
        """Pristine traversal cost between two passages inside one area."""
        if pi == pj:
            return 0.0
        key = (area_id, pi, pj) if pi < pj else (area_id, pj, pi)
        return self._area_costs.get(key, INF)

    def edge_cost(self, area_id: str, pi: str, pj: str) -> float:
        """Belief cost of moving from ``pi`` to ``pj`` through ``area_id``."""
        if pi in self.blocked_passages or pj in self.blocked_passages:
            return INF
        if area_id in self.blocked_areas:
            return INF
        return self.area_cost(area_id, pi, pj)

    def cost(self, pi: str, pj: str) -> float:
        """C(p_i, p_j): cheapest open connection through any shared area."""
        for p in (pi, pj):
            if p not in self.source.passages:
                raise UnknownPassage(p)
        if pi in self.blocked_passages or pj in self.blocked_passages:
            return INF
        if pi == pj:
            return 0.0
        shared = set(self.source.passages[pi].areas) & set(self.source.passages[pj].areas)
        return min((self.edge_cost(a, pi, pj) for a in sorted(shared)), default=INF)

    @property
    def costs(self) -> dict[tuple[str, str], float]:
        return {(a, b): self.cost(a, b) for a in self.passages for b in self.passages}

    # -- anchoring -------------------------------------------------------------

    def point_cell(self, area_id: str, p: Point) -> raster.Cell:
        grid = self.grids[area_id]
        try:
            cell = raster.world_to_cell(grid, p)
        except raster.OutOfBounds:
            cell = None
        if cell is None or grid.occupied(cell):
            cell = raster.nearest_free_cell(grid, p)
        return cell

    def leg_cost(self, area_id: str, p: Point, passage_id: str) -> float:
        """Grid A* cost from a free point to a passage anchor inside one area."""
        key = (area_id, p, passage_id)
        if key not in self._leg_cache:
            grid = self.grids[area_id]
            try:
                c = raster.grid_astar(grid, self.point_cell(area_id, p),
                                      self.anchors[(area_id, passage_id)]).cost
            except raster.NoPath:
                c = INF
            self._leg_cache[key] = c
        return self._leg_cache[key]

    def direct_cost(self, area_id: str, a: Point, b: Point) -> float:
        grid = self.grids[area_id]
        try:
            return raster.grid_astar(grid, self.point_cell(area_id, a),
                                     self.point_cell(area_id, b)).cost
        except raster.NoPath:
            return INF

    def locate(self, p: Point) -> str:
        aid = locate(self.source, p)
        if aid is None:
            raise UnlocatedPoint(f"({p.x}, {p.y}) on level {p.level} is in no area")
        return aid

    # -- routing ---------------------------------------------------------------

    def plan_route(self, start: Point, goal: Point) -> Route:
        """Minimal-cost route; equal costs resolve to the lexicographically smallest passage list."""
        s_area = self.locate(start)
        g_area = self.locate(goal)
        if s_area in self.blocked_areas:
            raise StartInBlockedArea(f"start area {s_area} is blocked")
        if g_area in self.blocked_areas:
            raise NoRoute(f"goal area {g_area} is blocked")
        src = self.source

        # state: (passage just crossed, area now entered)
        heap: list = []
        if s_area == g_area:
            d = self.direct_cost(s_area, start, goal)
            if d < INF:
                heap.append((d, (), _GOAL, (d,)))
        for p in src.passages_of(s_area):
            if p.id in self.blocked_passages:
                continue
            nxt = p.other(s_area)
            if nxt in self.blocked_areas:
                continue
            c = self.leg_cost(s_area, start, p.id)
            if c < INF:
                heap.append((c, (p.id,), (p.id, nxt), (c,)))
        heapq.heapify(heap)
        done = set()
        while heap:
            cost, seq, state, legs = heapq.heappop(heap)
            if state == _GOAL:
                areas = [s_area]
                for pid in seq:
                    areas.append(src.passages[pid].other(areas[-1]))
                return Route(tuple(areas), seq, cost, legs, start, goal)
            if state in done:
                continue
            done.add(state)
            pid, area = state
            if area == g_area:
                c = self.leg_cost(area, goal, pid)
                if c < INF:
                    heapq.heappush(heap, (cost + c, seq, _GOAL, legs + (c,)))
            for q in src.passages_of(area):
                if q.id == pid:
                    continue
                nxt = q.other(area)
                if nxt in self.blocked_areas:
                    continue
                w = self.edge_cost(area, pid, q.id)
                if w < INF and (q.id, nxt) not in done:
                    heapq.heappush(heap, (cost + w, seq + (q.id,), (q.id, nxt), legs + (w,)))
        raise NoRoute(f"no open route from {s_area} to {g_area}")

    def expand_route(self, route: Route) -> list[tuple[str, list[Point]]]:
        """Per-area grid paths realising ``route``, as world-coordinate polylines."""
        out = []
        legs = []
        cur = ("point", route.start)
        for area, nxt_pid in zip(route.areas, list(route.passage_sequence) + [None]):
            end = ("point", route.goal) if nxt_pid is None else ("passage", nxt_pid)
            legs.append((area, cur, end))
            if nxt_pid is not None:
                cur = ("passage", nxt_pid)
        for area, a, b in legs:
            grid = self.grids[area]

            def cell(ref):
                kind, v = ref
                return self.point_cell(area, v) if kind == "point" else self.anchors[(area, v)]

            path = raster.grid_astar(grid, cell(a), cell(b))
            out.append((area, path.world_points(grid)))
        return out

    # -- persistence -----------------------------------------------------------

    def export_costs(self) -> str:
        """Plain-text cost table: ``p_i p_j cost_m`` per line, grouped by area."""
        lines = ["# haltnav passage cost table", f"# resolution {self.resolution!r}"]
        for aid in self.source.areas:
            lines.append(f"# area {aid}")
            pids = sorted(self.source.adjacency.get(aid, ()))
            for pi, pj in combinations(pids, 2):
                c = self.area_cost(aid, pi, pj)
                lines.append(f"{pi} {pj} {'inf' if c == INF else repr(c)}")
        return "\n".join(lines) + "\n"


def parse_cost_table(text: str, graph: AreaGraph) -> dict[tuple[str, str, str], float]:
    costs = {}
    area = None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "area":
                area = parts[1]
            continue
        try:
            pi, pj, c = line.split()
            val = float(c)
        except ValueError:
            raise ValueError(f"line {n}: expected 'p_i p_j cost_m', got {line!r}") from None
        a = area
        if a is None:
            shared = set(graph.passage(pi).areas) & set(graph.passage(pj).areas)
            if len(shared) != 1:
                raise ValueError(f"line {n}: cannot infer area for {pi} {pj}")
            a = shared.pop()
        key = (a, pi, pj) if pi < pj else (a, pj, pi)
        costs[key] = val
    return costs


def _area_grids(graph: AreaGraph, resolution: float, inflation: float):
    grids, anchors = {}, {}
    for aid, area in graph.areas.items():
        try:
            grid = raster.rasterize_area(area, graph.passages_of(aid), resolution, inflation)
        except (raster.RasterError, ValueError) as exc:
            raise RasterFailure(aid, exc) from exc
        grids[aid] = grid
        for p in graph.passages_of(aid):
            anchors[(aid, p.id)] = raster.anchor_cell(grid, p)
    return grids, anchors


def build_passage_graph(graph: AreaGraph, resolution: float = raster.DEFAULT_RESOLUTION,
                        inflation: float = 0.0, cost_table: str | None = None) -> PassageGraph:
    """Rasterize every area and cache pairwise passage costs (or load them from a table)."""
    grids, anchors = _area_grids(graph, resolution, inflation)
    if cost_table is not None:
        area_costs = parse_cost_table(cost_table, graph)
    else:
        area_costs = {}
        for aid in graph.areas:
            pids = sorted(graph.adjacency.get(aid, ()))
            for pi, pj in combinations(pids, 2):
                try:
                    c = raster.grid_astar(grids[aid], anchors[(aid, pi)], anchors[(aid, pj)]).cost
                except raster.NoPath:
                    c = INF
                area_costs[(aid, pi, pj)] = c
    return PassageGraph(graph, resolution, grids, anchors, area_costs, inflation)

"""Discrete-action kinematic agent standing in for the local VLN policy.

The simulator enforces physics against the static union raster of each
level plus the scenario's unmapped obstacles. The oracle follower plans on
the static map only, so an unmapped blockage shows up as collisions, which
is exactly what the halting monitor has to catch.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

from haltnav import geometry as geo
from haltnav import raster
from haltnav.geometry import Point
from haltnav.osmag import AreaGraph, locate

log = logging.getLogger(__name__)


class MicroAction(str, enum.Enum):
    FORWARD = "Forward"
    TURN_LEFT = "TurnLeft"
    TURN_RIGHT = "TurnRight"
    STOP = "Stop"


class NoLocalPath(RuntimeError):
    pass


@dataclass(frozen=True)
class ExecParams:
    step_len: float = 0.25
    turn_angle: float = math.radians(15.0)
    waypoint_tol: float = 0.3
    align_tol: float = math.radians(22.5)
    sensor_range: float = 3.0
    fov: float = math.radians(90.0)
    lookahead: float = 0.5
    clearance: float = 0.25  # planning-only inflation; physics uses the raw raster


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float
    level: int = 0
    area: str | None = None
    t: int = 0

    @property
    def point(self) -> Point:
        return Point(self.x, self.y, self.level)

    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.heading)


@dataclass(frozen=True)
class Obstacle:
    id: str
    level: int = 0
    center: tuple[float, float] | None = None
    radius: float = 0.0
    polygon: tuple[tuple[float, float], ...] | None = None
    blocks: str | None = None

    def __post_init__(self):
        if self.polygon is None:
            if self.center is None or not self.radius > 0:
                raise ValueError(f"obstacle {self.id}: disc needs a center and radius > 0")
        else:
            if len(geo.ring(self.polygon)) < 3 or abs(geo.signed_area(self.polygon)) <= geo.EPS:
                raise ValueError(f"obstacle {self.id}: invalid polygon")
            if geo.self_intersections(self.polygon):
                raise ValueError(f"obstacle {self.id}: self-intersecting polygon")

    @classmethod
    def blocking(cls, graph: AreaGraph, passage_id: str, margin: float = 0.1,
                 ident: str | None = None) -> "Obstacle":
        """Disc plugging a doorway: centered on its midpoint, radius width/2 + margin."""
        p = graph.passage(passage_id)
        m = p.midpoint
        return cls(ident or f"block-{passage_id}", p.level, (m.x, m.y), p.width / 2 + margin,
                   blocks=passage_id)

    @property
    def ref_point(self) -> tuple[float, float]:
        if self.polygon is None:
            return self.center
        return geo.centroid(self.polygon)

    def contains(self, x: float, y: float) -> bool:
        if self.polygon is None:
            return math.hypot(x - self.center[0], y - self.center[1]) <= self.radius
        return geo.contains(self.polygon, (x, y))

    def hits_segment(self, a, b) -> bool:
        if self.polygon is None:
            return geo.point_segment_distance(self.center, a, b) <= self.radius
        if self.contains(*a) or self.contains(*b):
            return True
        return any(geo.segments_intersect(a, b, e0, e1) for e0, e1 in geo.edges(self.polygon))

    def overlaps_rect(self, x0, y0, x1, y1) -> bool:
        if self.polygon is None:
            cx, cy = self.center
            nx = min(max(cx, x0), x1)
            ny = min(max(cy, y0), y1)
            return math.hypot(cx - nx, cy - ny) <= self.radius
        corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        if any(self.contains(*c) for c in corners):
            return True
        if any(x0 <= vx <= x1 and y0 <= vy <= y1 for vx, vy in geo.ring(self.polygon)):
            return True
        return any(
            geo.segments_intersect(c0, c1, e0, e1)
            for c0, c1 in geo.edges(corners) for e0, e1 in geo.edges(self.polygon)
        )

    def to_dict(self) -> dict:
        d = {"id": self.id, "level": self.level, "blocks": self.blocks}
        if self.polygon is None:
            d["disc"] = {"x": self.center[0], "y": self.center[1], "r": self.radius}
        else:
            d["polygon"] = [list(v) for v in self.polygon]
        return d


@dataclass(frozen=True)
class Observation:
    pose: tuple[float, float, float]
    level: int
    area: str | None
    collision: int
    visible_obstacles: tuple[tuple[str, float, float], ...]
    visible_passages: tuple[tuple[str, float, float, bool], ...]

    def passage(self, pid: str):
        return next((v for v in self.visible_passages if v[0] == pid), None)

    def to_dict(self) -> dict:
        return {
            "pose": {"x": self.pose[0], "y": self.pose[1], "heading": self.pose[2],
                     "level": self.level},
            "area": self.area,
            "collision": self.collision,
            "visible_obstacles": [
                {"id": i, "range": r, "bearing": b} for i, r, b in self.visible_obstacles
            ],
            "visible_passages": [
                {"id": i, "range": r, "bearing": b, "obstructed": o}
                for i, r, b, o in self.visible_passages
            ],
        }


class World:
    """Static map rasters plus unmapped obstacles for one episode."""

    def __init__(self, graph: AreaGraph, resolution: float = raster.DEFAULT_RESOLUTION,
                 obstacles=(), params: ExecParams | None = None, level_grids=None):
        self.graph = graph
        self.resolution = resolution
        self.params = params or ExecParams()
        self.obstacles: list[Obstacle] = list(obstacles)
        self.grids: dict[int, raster.OccupancyGrid] = level_grids or {
            lv: raster.rasterize_level(graph, lv, resolution) for lv in graph.levels
        }
        self._plan_grids: dict[str, raster.OccupancyGrid] = {}
        self.obstructed: frozenset[str] = frozenset(
            pid for pid in graph.passages if self._opening_obstructed(pid)
        )

    def _opening_obstructed(self, pid: str) -> bool:
        p = self.graph.passages[pid]
        levels = {self.graph.areas[a].level for a in p.areas}
        for lv in levels:
            grid = self.grids[lv]
            for cell in grid.openings.get(pid, ()):
                rect = grid.cell_rect(cell)
                if any(o.level == lv and o.overlaps_rect(*rect) for o in self.obstacles):
                    return True
        return False

    def plan_grid(self, area_id: str) -> raster.OccupancyGrid:
        """Inflated static raster of one area used by the follower for clearance."""
        if area_id not in self._plan_grids:
            area = self.graph.areas[area_id]
            passages = self.graph.passages_of(area_id)
            clearance = self.params.clearance
            while True:
                try:
                    grid = raster.rasterize_area(area, passages, self.resolution, clearance)
                    break
                except raster.ResolutionTooCoarse:
                    if clearance <= 0:
                        raise
                    clearance = clearance / 2 if clearance > self.resolution else 0.0
            self._plan_grids[area_id] = grid
        return self._plan_grids[area_id]

    def free_point(self, x: float, y: float, level: int) -> bool:
        grid = self.grids.get(level)
        if grid is None or not grid.free_at(x, y):
            return False
        return not any(o.level == level and o.contains(x, y) for o in self.obstacles)

    def statically_free_segment(self, a, b, level: int) -> bool:
        grid = self.grids.get(level)
        return grid is not None and raster.segment_free(grid, a, b)

    def segment_clear(self, a, b, level: int) -> bool:
        if not self.statically_free_segment(a, b, level):
            return False
        return not any(o.level == level and o.hits_segment(a, b) for o in self.obstacles)

    def locate(self, x: float, y: float, level: int) -> str | None:
        return locate(self.graph, Point(x, y, level))


def initial_state(world: World, x: float, y: float, heading: float, level: int = 0) -> AgentState:
    return AgentState(x, y, geo.normalize_angle(heading), level, world.locate(x, y, level), 0)


def step(world: World, s: AgentState, a: MicroAction) -> tuple[AgentState, int]:
    """Apply one micro-action; blocked Forward moves leave the pose unchanged and report c_t=1."""
    a = MicroAction(a)
    prm = world.params
    if a is MicroAction.FORWARD:
        nx = s.x + prm.step_len * math.cos(s.heading)
        ny = s.y + prm.step_len * math.sin(s.heading)
        if world.segment_clear((s.x, s.y), (nx, ny), s.level):
            area = world.locate(nx, ny, s.level) or s.area
            return replace(s, x=nx, y=ny, area=area, t=s.t + 1), 0
        return replace(s, t=s.t + 1), 1
    if a is MicroAction.TURN_LEFT:
        return replace(s, heading=geo.normalize_angle(s.heading + prm.turn_angle), t=s.t + 1), 0
    if a is MicroAction.TURN_RIGHT:
        return replace(s, heading=geo.normalize_angle(s.heading - prm.turn_angle), t=s.t + 1), 0
    return replace(s, t=s.t + 1), 0


def _line_of_sight(grid: raster.OccupancyGrid, a, b) -> bool:
    # the target itself may sit on a wall line (door midpoints), so stop one cell short
    d = math.hypot(b[0] - a[0], b[1] - a[1])
    if d <= grid.resolution:
        return True
    t = (d - grid.resolution) / d
    end = (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))
    return raster.segment_free(grid, a, end)


def sense(world: World, s: AgentState, sensor_range: float | None = None,
          fov: float | None = None, collision: int = 0) -> Observation:
    rng_max = world.params.sensor_range if sensor_range is None else sensor_range
    half = (world.params.fov if fov is None else fov) / 2.0
    grid = world.grids.get(s.level)
    obstacles = []
    for o in world.obstacles:
        if o.level != s.level:
            continue
        ox, oy = o.ref_point
        r = math.hypot(ox - s.x, oy - s.y)
        b = geo.bearing_to(s.x, s.y, s.heading, ox, oy)
        if r <= rng_max and abs(b) <= half + 1e-12 and _line_of_sight(grid, (s.x, s.y), (ox, oy)):
            obstacles.append((o.id, r, b))
    passages = []
    for p in world.graph.passages.values():
        if s.level not in {world.graph.areas[a].level for a in p.areas}:
            continue
        m = p.midpoint
        r = math.hypot(m.x - s.x, m.y - s.y)
        b = geo.bearing_to(s.x, s.y, s.heading, m.x, m.y)
        if r <= rng_max and abs(b) <= half + 1e-12 and _line_of_sight(grid, (s.x, s.y), (m.x, m.y)):
            passages.append((p.id, r, b, p.id in world.obstructed))
    area = world.locate(s.x, s.y, s.level)
    return Observation(s.pose(), s.level, area, collision, tuple(obstacles), tuple(passages))


# -- oracle follower -----------------------------------------------------------


def is_transfer(world: World, passage_id: str | None) -> bool:
    return passage_id is not None and world.graph.is_cross_level(passage_id)


def plan_macro_path(world: World, s: AgentState, m) -> list[tuple[float, float]]:
    """Static-map waypoints for a macro: intra-area A* legs through the target passage."""
    if m.target_point is None:
        raise NoLocalPath(f"macro {m.index} has no geometric target")
    area = s.area or world.locate(s.x, s.y, s.level)
    if area is None:
        raise NoLocalPath(f"agent at ({s.x:.2f}, {s.y:.2f}) is outside every area")
    tgt = m.target_point
    legs = []
    pid = m.target_passage
    if m.kind == "traverse_to_passage" and pid in world.graph.adjacency.get(area, ()):
        if is_transfer(world, pid):
            legs.append((area, (s.x, s.y), (tgt.x, tgt.y)))
        else:
            nxt = world.graph.passages[pid].other(area)
            mid = world.graph.passages[pid].midpoint
            legs.append((area, (s.x, s.y), ("anchor", mid)))
            legs.append((nxt, ("anchor", mid), (tgt.x, tgt.y)))
    else:
        legs.append((area, (s.x, s.y), (tgt.x, tgt.y)))
    pts: list[tuple[float, float]] = []
    for aid, a, b in legs:
        grid = world.plan_grid(aid)

        def cell(ref):
            xy = ref[1].xy() if ref[0] == "anchor" else ref
            try:
                c = raster.world_to_cell(grid, xy)
                if grid.free(c):
                    return c
            except raster.OutOfBounds:
                pass
            return raster.nearest_free_cell(grid, xy)

        try:
            path = raster.grid_astar(grid, cell(a), cell(b))
        except raster.NoPath as exc:
            raise NoLocalPath(str(exc)) from exc
        pts.extend(p.xy() for p in path.world_points(grid))
    pts.append((tgt.x, tgt.y))
    return pts


class OraclePolicy:
    """Greedy pure-pursuit follower of the static-map path; blind to obstacles."""

    name = "oracle"

    def __init__(self, world: World):
        self.world = world
        self._key = None
        self._path: list[tuple[float, float]] = []
        self._progress = 0

    def reset(self):
        self._key = None

    def _ensure_path(self, s: AgentState, m):
        key = (m.index, m.kind, m.target_passage, m.target_point)
        if key != self._key:
            self._path = plan_macro_path(self.world, s, m)
            self._progress = 0
            self._key = key

    def aim_point(self, s: AgentState, m) -> tuple[float, float]:
        self._ensure_path(s, m)
        path = self._path
        window = path[self._progress : self._progress + 40]
        best = min(range(len(window)),
                   key=lambda i: (math.hypot(window[i][0] - s.x, window[i][1] - s.y), i))
        self._progress += best
        acc = 0.0
        j = self._progress
        while j + 1 < len(path) and acc < self.world.params.lookahead:
            acc += math.hypot(path[j + 1][0] - path[j][0], path[j + 1][1] - path[j][1])
            j += 1
        return path[j]

    def act(self, s: AgentState, m, obs: Observation | None = None) -> MicroAction:
        prm = self.world.params
        tgt = m.target_point
        if tgt is None:
            raise NoLocalPath(f"macro {m.index} has no geometric target")
        if math.hypot(tgt.x - s.x, tgt.y - s.y) <= prm.waypoint_tol:
            return MicroAction.STOP
        ax, ay = self.aim_point(s, m)
        err = geo.bearing_to(s.x, s.y, s.heading, ax, ay)
        if abs(err) <= prm.align_tol and self._forward_free(s, s.heading):
            return MicroAction.FORWARD
        # Turn toward the statically free heading closest to the aim point.
        # Forward along a detour heading is allowed only when nothing better is free.
        n = int(round(math.pi / prm.turn_angle))
        best = None
        for k in range(-n, n + 1):
            if not self._forward_free(s, s.heading + k * prm.turn_angle):
                continue
            key = (abs(geo.wrap_pi(err - k * prm.turn_angle)), abs(k), -k)
            if best is None or key < best[:3]:
                best = (*key, k)
        if best is None:
            k = 1 if err >= 0 or abs(err) >= math.pi - 1e-9 else -1
        else:
            k = best[3]
            if k == 0:
                return MicroAction.FORWARD
        return MicroAction.TURN_LEFT if k > 0 else MicroAction.TURN_RIGHT

    def _forward_free(self, s: AgentState, heading: float) -> bool:
        step_len = self.world.params.step_len
        nx = s.x + step_len * math.cos(heading)
        ny = s.y + step_len * math.sin(heading)
        return self.world.statically_free_segment((s.x, s.y), (nx, ny), s.level)


def oracle_policy(s: AgentState, m, world: World) -> MicroAction:
    """One-shot oracle decision (plans from scratch; episodes keep an OraclePolicy instead)."""
    return OraclePolicy(world).act(s, m)


@dataclass
class ExternalExecutor:
    """Local policy served by a JSON-lines backend; the oracle covers any failure."""

    client: object
    world: World
    notes: list = field(default_factory=list)
    name: str = "external"

    def __post_init__(self):
        self._oracle = OraclePolicy(self.world)
        self._failed = False

    def act(self, s: AgentState, m, obs: Observation) -> MicroAction:
        suggestion = self._oracle.act(s, m, obs)
        if self._failed:
            return suggestion
        aim = self._oracle.aim_point(s, m) if m.target_point is not None else (s.x, s.y)
        observation = obs.to_dict()
        observation["waypoint"] = {"x": aim[0], "y": aim[1]}
        observation["target"] = {"x": m.target_point.x, "y": m.target_point.y}
        observation["waypoint_tol"] = self.world.params.waypoint_tol
        try:
            reply = self.client.request(
                {"type": "act", "observation": observation, "instruction": m.instruction_text}
            )
            return MicroAction(reply["action"])
        except Exception as exc:  # noqa: BLE001 - any backend fault means fallback
            self._failed = True
            self.notes.append(f"executor fallback to oracle at t={s.t}: {exc}")
            log.warning("executor backend failed (%s); oracle takes over", exc)
            return suggestion

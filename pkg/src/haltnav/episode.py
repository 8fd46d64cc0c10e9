"""Episode runner: route, dispatch, act, halt, invalidate, replan.

One episode owns its belief graph, world and RNG. The pristine map data
(rasters, passage costs) is cached per map text and shared read-only.
"""

from __future__ import annotations

import functools
import heapq
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from haltnav import raster
from haltnav.dispatcher import (
    LEVELS,
    ExternalDispatcher,
    History,
    RouteExhausted,
    TargetInstruction,
    TemplateDispatcher,
    format_graph_context,
)
from haltnav.executor import (
    AgentState,
    ExecParams,
    ExternalExecutor,
    MicroAction,
    NoLocalPath,
    Obstacle,
    OraclePolicy,
    World,
    initial_state,
    is_transfer,
    sense,
    step,
)
from haltnav.geometry import Point
from haltnav.osmag import AreaGraph, locate, parse_map
from haltnav.passage_graph import INF, NoRoute, PassageGraph, build_passage_graph
from haltnav.protocol import DEFAULT_TIMEOUT, JsonLineClient, parse_backend
from haltnav.rvh import CollisionBuffer, ExternalTraversability, RVHConfig, beta

log = logging.getLogger(__name__)

SCHEMA = "haltnav-log/1"
SUCCESS_RADIUS = 3.0
FAILURE_REASONS = ("no_route", "i_max", "t_max", "no_local_path", "dispatch_failed")


class ScenarioInvalid(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class NonpositiveShortestPath(ValueError):
    pass


# -- configuration -----------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeConfig:
    i_max: int = 20
    t_max: int = 2000
    rvh: RVHConfig = field(default_factory=RVHConfig)
    exec: ExecParams = field(default_factory=ExecParams)
    resolution: float = raster.DEFAULT_RESOLUTION
    spl_reference: str = "pristine"  # or "obstacle_aware"

    def __post_init__(self):
        if self.i_max < 1 or self.t_max < 1:
            raise ValueError("i_max and t_max must be positive")
        if self.spl_reference not in ("pristine", "obstacle_aware"):
            raise ValueError("spl_reference must be 'pristine' or 'obstacle_aware'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exec"]["turn_angle_deg"] = math.degrees(d["exec"].pop("turn_angle"))
        d["exec"]["align_tol_deg"] = math.degrees(d["exec"].pop("align_tol"))
        d["exec"]["fov_deg"] = math.degrees(d["exec"].pop("fov"))
        return d


def apply_overrides(cfg: EpisodeConfig, overrides: dict | None) -> EpisodeConfig:
    """Merge a YAML-style override mapping into a config."""
    if not overrides:
        return cfg
    ov = dict(overrides)
    rvh = cfg.rvh
    if "rvh" in ov:
        rvh = replace(rvh, **ov.pop("rvh"))
    ex = cfg.exec
    for key in ("sensor", "exec"):
        if key in ov:
            vals = dict(ov.pop(key))
            if "range" in vals:
                vals["sensor_range"] = vals.pop("range")
            for deg in ("fov", "turn_angle", "align_tol"):
                if f"{deg}_deg" in vals:
                    vals[deg] = math.radians(vals.pop(f"{deg}_deg"))
            ex = replace(ex, **vals)
    names = {"I_max": "i_max", "T_max": "t_max"}
    top = {names.get(k, k): v for k, v in ov.items()}
    known = {f.name for f in fields(EpisodeConfig)} - {"rvh", "exec"}
    unknown = set(top) - known
    if unknown:
        raise ScenarioInvalid(f"unknown overrides: {sorted(unknown)}")
    return replace(cfg, rvh=rvh, exec=ex, **top)


@dataclass(frozen=True)
class Backends:
    """Per-seam backend: None for the built-in oracle, else a JSON-lines endpoint."""

    dispatch: str | None = None
    executor: str | None = None
    vlm: str | None = None
    timeout: float = DEFAULT_TIMEOUT

    @classmethod
    def parse(cls, dispatch="oracle", executor="oracle", vlm="oracle", timeout=DEFAULT_TIMEOUT):
        return cls(parse_backend(dispatch), parse_backend(executor), parse_backend(vlm), timeout)


# -- scenarios ---------------------------------------------------------------------


@dataclass
class Scenario:
    name: str
    map_path: Path
    start: Point
    heading: float
    goal: Point
    goal_area: str
    goal_object: str
    level: str
    instruction: str
    obstacles: list = field(default_factory=list)  # raw specs, resolved against the map
    seed: int = 0
    overrides: dict = field(default_factory=dict)
    family: str = ""

    @classmethod
    def from_dict(cls, d: dict, base_dir=".", name: str | None = None) -> "Scenario":
        try:
            start = d["start"]
            goal = d["goal"]
            level = d.get("level", "L2")
            if level not in LEVELS:
                raise ScenarioInvalid(f"level must be one of {LEVELS}")
            map_path = Path(base_dir) / d["map"]
            sc = cls(
                name=str(d.get("name") or name or map_path.stem),
                map_path=map_path,
                start=Point(start["x"], start["y"], start.get("level", 0)),
                heading=math.radians(float(start.get("heading_deg", 0.0))),
                goal=Point(goal["x"], goal["y"], goal.get("level", 0)),
                goal_area=str(goal["area"]),
                goal_object=str(goal.get("object", "target")),
                level=level,
                instruction=str(d.get("instruction") or ""),
                obstacles=list(d.get("obstacles") or []),
                seed=int(d.get("seed", 0)),
                overrides=dict(d.get("overrides") or {}),
                family=str(d.get("family", "")),
            )
        except ScenarioInvalid:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioInvalid(f"malformed scenario: {exc!r}") from exc
        return sc

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ScenarioInvalid(f"cannot read scenario {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ScenarioInvalid(f"{path} is not a scenario mapping")
        return cls.from_dict(data, path.parent, path.stem)

    def resolve_obstacles(self, graph: AreaGraph) -> list[Obstacle]:
        out = []
        for n, spec in enumerate(self.obstacles):
            ident = str(spec.get("id", f"obs{n}"))
            try:
                if "blocks" in spec:
                    pid = spec["blocks"]
                    if pid not in graph.passages:
                        raise ScenarioInvalid(f"obstacle {ident} blocks unknown passage {pid!r}")
                    out.append(Obstacle.blocking(graph, pid, ident=ident))
                elif "disc" in spec:
                    d = spec["disc"]
                    out.append(Obstacle(ident, int(spec.get("level", 0)), (float(d["x"]), float(d["y"])),
                                        float(d["r"]), blocks=spec.get("passage")))
                elif "polygon" in spec:
                    poly = tuple((float(x), float(y)) for x, y in spec["polygon"])
                    out.append(Obstacle(ident, int(spec.get("level", 0)), polygon=poly,
                                        blocks=spec.get("passage")))
                else:
                    raise ScenarioInvalid(f"obstacle {ident} needs blocks, disc or polygon")
            except (KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, ScenarioInvalid):
                    raise
                raise ScenarioInvalid(f"obstacle {ident}: {exc}") from exc
        for o in out:
            if o.level not in graph.levels:
                raise ScenarioInvalid(f"obstacle {o.id} on unknown level {o.level}")
            x0, y0, x1, y1 = graph.bounds(o.level)
            ox, oy = o.ref_point
            if not (x0 <= ox <= x1 and y0 <= oy <= y1):
                raise ScenarioInvalid(f"obstacle {o.id} lies outside the map")
        return out

    def target_instruction(self, graph: AreaGraph) -> TargetInstruction:
        text = self.instruction or f"Find the {self.goal_object} in {graph.areas[self.goal_area].name}."
        return TargetInstruction(text, self.level, self.goal, self.goal_area, self.goal_object)


# -- shared map data -------------------------------------------------------------------


@dataclass
class MapBundle:
    graph: AreaGraph
    passage_graph: PassageGraph  # pristine; episodes work on copies
    level_grids: dict
    plan_grids: dict


@functools.lru_cache(maxsize=16)
def _bundle(text: str, resolution: float) -> MapBundle:
    graph = parse_map(text)
    pg = build_passage_graph(graph, resolution)
    grids = {lv: raster.rasterize_level(graph, lv, resolution) for lv in graph.levels}
    return MapBundle(graph, pg, grids, {})


def load_bundle(map_path, resolution: float) -> MapBundle:
    try:
        text = Path(map_path).read_text()
    except OSError as exc:
        raise ScenarioInvalid(f"cannot read map {map_path}: {exc}") from exc
    return _bundle(text, float(resolution))


def make_world(bundle: MapBundle, obstacles, params: ExecParams) -> World:
    world = World(bundle.graph, bundle.passage_graph.resolution, obstacles, params,
                  level_grids=bundle.level_grids)
    if params.clearance == ExecParams().clearance:
        world._plan_grids = bundle.plan_grids  # immutable rasters, safe to share
    return world


# -- goal test and reference path ----------------------------------------------------


def goal_distance(x: float, y: float, goal: Point) -> float:
    return math.hypot(x - goal.x, y - goal.y)


def goal_reached(graph: AreaGraph, pose: Point, goal: Point, goal_area: str,
                 radius: float = SUCCESS_RADIUS) -> bool:
    """Within ``radius`` of the goal (inclusive) and inside the goal area."""
    if pose.level != goal.level:
        return False
    if goal_distance(pose.x, pose.y, goal) > radius:
        return False
    return locate(graph, pose) == goal_area


def _with_obstacles(grid: raster.OccupancyGrid, obstacles, level: int) -> raster.OccupancyGrid:
    cells = np.array(grid.cells)
    for o in obstacles:
        if o.level != level:
            continue
        if o.polygon is None:
            cx, cy = o.center
            bx = (cx - o.radius, cy - o.radius, cx + o.radius, cy + o.radius)
        else:
            xs, ys = zip(*o.polygon)
            bx = (min(xs), min(ys), max(xs), max(ys))
        res = grid.resolution
        c0 = max(0, int(math.floor((bx[0] - grid.origin.x) / res)))
        c1 = min(grid.width - 1, int(math.floor((bx[2] - grid.origin.x) / res)))
        r0 = max(0, int(math.floor((bx[1] - grid.origin.y) / res)))
        r1 = min(grid.height - 1, int(math.floor((bx[3] - grid.origin.y) / res)))
        for r in range(r0, r1 + 1):
            for c in range(c0, c1 + 1):
                if o.overlaps_rect(*grid.cell_rect((c, r))):
                    cells[r, c] = True
    return raster.OccupancyGrid(grid.origin, grid.resolution, grid.width, grid.height, cells,
                                grid.openings)


def _cell_for(grid: raster.OccupancyGrid, p) -> raster.Cell:
    try:
        c = raster.world_to_cell(grid, p)
        if grid.free(c):
            return c
    except raster.OutOfBounds:
        pass
    return raster.nearest_free_cell(grid, p)


def shortest_path_length(graph: AreaGraph, start: Point, goal: Point,
                         resolution: float = raster.DEFAULT_RESOLUTION, grids=None,
                         obstacles=()) -> float:
    """Grid shortest path over the union rasters; levels join through cross-level passages."""
    grids = dict(grids or {lv: raster.rasterize_level(graph, lv, resolution) for lv in graph.levels})
    if obstacles:
        grids = {lv: _with_obstacles(g, obstacles, lv) for lv, g in grids.items()}
    for p in (start, goal):
        if p.level not in grids:
            raise raster.NoPath(f"level {p.level} has no areas")

    def leg(a: Point, b: Point) -> float:
        g = grids[a.level]
        try:
            return raster.grid_astar(g, _cell_for(g, a), _cell_for(g, b)).cost
        except raster.NoPath:
            return INF

    if start.level == goal.level:
        d = leg(start, goal)
        if d < INF:
            return d
    # nodes are points; cross-level passages contribute one node per side, joined at zero cost
    nodes = {"start": start, "goal": goal}
    links = []
    for pid in sorted(graph.passages):
        if not graph.is_cross_level(pid):
            continue
        p = graph.passages[pid]
        m = p.midpoint
        a, b = (graph.areas[x].level for x in p.areas)
        nodes[(pid, a)] = Point(m.x, m.y, a)
        nodes[(pid, b)] = Point(m.x, m.y, b)
        links.append(((pid, a), (pid, b)))
    dist = {"start": 0.0}
    heap = [(0.0, 0, "start")]
    order = {k: i for i, k in enumerate(nodes)}
    done = set()
    while heap:
        d, _, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == "goal":
            return d
        nbrs = []
        for v, pv in nodes.items():
            if v != u and v not in done and pv.level == nodes[u].level and v != "start":
                nbrs.append((v, leg(nodes[u], pv)))
        for x, y in links:
            if u == x and y not in done:
                nbrs.append((y, 0.0))
            elif u == y and x not in done:
                nbrs.append((x, 0.0))
        for v, w in nbrs:
            if d + w < dist.get(v, INF):
                dist[v] = d + w
                heapq.heappush(heap, (d + w, order[v], v))
    raise raster.NoPath(f"goal unreachable from ({start.x}, {start.y}, L{start.level})")


# -- logs -------------------------------------------------------------------------------


@dataclass
class EpisodeLog:
    scenario: str
    seed: int
    family: str
    instruction_level: str
    config: dict
    backends: dict
    start: dict
    goal: dict
    obstacles: list
    steps: list = field(default_factory=list)
    macros: list = field(default_factory=list)
    halts: list = field(default_factory=list)
    replans: list = field(default_factory=list)
    route_refreshes: list = field(default_factory=list)
    route_history: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    terminal: dict = field(default_factory=dict)
    path_length: float = 0.0
    shortest_path: float | None = None
    schema: str = SCHEMA

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeLog":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported log schema {d.get('schema')!r}")
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @classmethod
    def from_json(cls, text: str) -> "EpisodeLog":
        return cls.from_dict(json.loads(text))

    @property
    def success(self) -> bool:
        return bool(self.terminal.get("success"))

    @property
    def collisions(self) -> int:
        return sum(s["c"] for s in self.steps)

    def trajectory(self) -> list[tuple[float, float, int]]:
        pts = [(self.start["x"], self.start["y"], self.start["level"])]
        pts += [(s["x"], s["y"], s["level"]) for s in self.steps]
        return pts


def _r(v: float) -> float:
    return round(float(v), 6)


def _route_record(route, t: int, reason: str) -> dict:
    return {"step": t, "reason": reason, "passages": list(route.passage_sequence),
            "areas": list(route.areas), "cost": _r(route.total_cost)}


# -- episode loop ------------------------------------------------------------------------


def _clients(backends: Backends):
    return {seam: JsonLineClient(ep, backends.timeout)
            for seam, ep in (("dispatch", backends.dispatch), ("executor", backends.executor),
                             ("vlm", backends.vlm)) if ep}


def run_episode(scenario: Scenario, config: EpisodeConfig | None = None,
                backends: Backends | None = None, overrides: dict | None = None) -> EpisodeLog:
    """Run one episode; scenario overrides apply on top of ``config``, then ``overrides``."""
    cfg = apply_overrides(apply_overrides(config or EpisodeConfig(), scenario.overrides), overrides)
    backends = backends or Backends()
    bundle = load_bundle(scenario.map_path, cfg.resolution)
    graph = bundle.graph
    for label, p in (("start", scenario.start), ("goal", scenario.goal)):
        if locate(graph, p) is None:
            raise ScenarioInvalid(f"{label} ({p.x}, {p.y}) on level {p.level} is in no area")
    if scenario.goal_area not in graph.areas:
        raise ScenarioInvalid(f"goal area {scenario.goal_area!r} is not in the map")
    obstacles = scenario.resolve_obstacles(graph)
    world = make_world(bundle, obstacles, cfg.exec)
    for o in obstacles:
        if o.level == scenario.start.level and o.contains(scenario.start.x, scenario.start.y):
            raise ScenarioInvalid(f"start lies inside obstacle {o.id}")

    clients = _clients(backends)
    try:
        return _run(scenario, cfg, backends, bundle, world, obstacles, clients)
    finally:
        for c in clients.values():
            c.close()


def _run(scenario, cfg, backends, bundle, world, obstacles, clients) -> EpisodeLog:
    graph = bundle.graph
    notes: list[str] = []
    rng = random.Random(scenario.seed)
    belief = bundle.passage_graph.copy().reset()
    instruction = scenario.target_instruction(graph)
    dispatcher = (ExternalDispatcher(clients["dispatch"], notes) if "dispatch" in clients
                  else TemplateDispatcher())
    executor = (ExternalExecutor(clients["executor"], world, notes) if "executor" in clients
                else OraclePolicy(world))
    vlm = (ExternalTraversability(clients["vlm"], graph.passages, notes) if "vlm" in clients
           else None)
    ref_obstacles = obstacles if cfg.spl_reference == "obstacle_aware" else ()
    try:
        shortest = shortest_path_length(graph, scenario.start, scenario.goal, cfg.resolution,
                                        bundle.level_grids, ref_obstacles)
    except raster.NoPath:
        shortest = None
        notes.append("goal unreachable on the reference map; SPL reference undefined")

    elog = EpisodeLog(
        scenario=scenario.name, seed=scenario.seed, family=scenario.family,
        instruction_level=scenario.level, config=cfg.to_dict(),
        backends={"dispatch": backends.dispatch or "oracle", "executor": backends.executor or "oracle",
                  "vlm": backends.vlm or "oracle"},
        start={"x": scenario.start.x, "y": scenario.start.y, "level": scenario.start.level,
               "heading": _r(scenario.heading)},
        goal={"x": scenario.goal.x, "y": scenario.goal.y, "level": scenario.goal.level,
              "area": scenario.goal_area, "object": scenario.goal_object},
        obstacles=[o.to_dict() for o in obstacles],
        notes=notes,
        shortest_path=None if shortest is None else _r(shortest),
    )
    s = initial_state(world, scenario.start.x, scenario.start.y, scenario.heading, scenario.start.level)
    path_len = 0.0
    min_dist = goal_distance(s.x, s.y, scenario.goal) if s.level == scenario.goal.level else INF

    def finish(success: bool, reason: str | None, i: int) -> EpisodeLog:
        elog.terminal = {
            "success": success, "failure_reason": reason, "steps": s.t, "macros": i,
            "final_distance": _r(goal_distance(s.x, s.y, scenario.goal)),
            "min_distance": None if min_dist == INF else _r(min_dist),
            "final_area": world.locate(s.x, s.y, s.level), "final_level": s.level,
        }
        elog.path_length = _r(path_len)
        return elog

    try:
        route = belief.plan_route(scenario.start, scenario.goal)
    except NoRoute as exc:
        notes.append(f"initial route: {exc}")
        return finish(False, "no_route", 0)
    elog.route_history.append(_route_record(route, 0, "initial"))

    history = History()
    buf = CollisionBuffer(cfg.rvh.k)
    i = 0
    while i < cfg.i_max and s.t < cfg.t_max:
        ctx = format_graph_context(belief, s.point, route, s.heading)
        try:
            m = dispatcher.dispatch(ctx, instruction, history)
        except RouteExhausted as exc:
            # the agent drifted off the route; recompute from where it stands
            if elog.route_refreshes and elog.route_refreshes[-1]["step"] == s.t:
                notes.append(f"dispatch failed after route refresh: {exc}")
                return finish(False, "dispatch_failed", i)
            try:
                route = belief.plan_route(s.point, scenario.goal)
            except NoRoute as nexc:
                notes.append(f"route refresh: {nexc}")
                return finish(False, "no_route", i)
            elog.route_refreshes.append({"step": s.t, "reason": str(exc)})
            elog.route_history.append(_route_record(route, s.t, "refresh"))
            continue

        t0 = s.t
        outcome = None
        verdict = None
        obs = sense(world, s)
        while s.t < cfg.t_max:
            try:
                a = executor.act(s, m, obs)
            except NoLocalPath as exc:
                notes.append(f"macro {m.index}: {exc}")
                elog.macros.append({"i": m.index, "macro": m.to_dict(), "outcome": "aborted",
                                    "dt": s.t - t0})
                return finish(False, "no_local_path", i)
            prev = s
            s, c = step(world, s, a)
            path_len += math.hypot(s.x - prev.x, s.y - prev.y)
            if s.level == scenario.goal.level:
                min_dist = min(min_dist, goal_distance(s.x, s.y, scenario.goal))
            elog.steps.append({"t": s.t, "x": _r(s.x), "y": _r(s.y), "heading": _r(s.heading),
                               "level": s.level, "action": MicroAction(a).value, "c": c,
                               "macro": m.index})
            buf.push(c)
            obs = sense(world, s, collision=c)
            if a == MicroAction.STOP:
                outcome = "done"
                break
            verdict = beta(buf, obs, m, cfg.rvh, rng, vlm)
            if verdict.halt:
                outcome = "halted_" + verdict.cause
                elog.halts.append({"step": s.t, "macro": m.index, **verdict.to_dict()})
                buf.clear()
                break
        if outcome is None:
            elog.macros.append({"i": m.index, "macro": m.to_dict(), "outcome": "interrupted",
                                "dt": s.t - t0})
            break
        elog.macros.append({"i": m.index, "macro": m.to_dict(), "outcome": outcome, "dt": s.t - t0})

        if outcome == "done" and m.kind == "traverse_to_passage" and is_transfer(world, m.target_passage):
            lvl = m.target_point.level
            area = world.locate(s.x, s.y, lvl)
            if area is not None:
                s = replace(s, level=lvl, area=area)
                if s.level == scenario.goal.level:
                    min_dist = min(min_dist, goal_distance(s.x, s.y, scenario.goal))
            else:
                notes.append(f"transfer through {m.target_passage} failed: no area on level {lvl}")

        history.append(m, outcome, s.pose())
        if outcome == "halted_reflective":
            pid = verdict.blocked_passage
            belief.invalidate_passage(pid)
            try:
                route = belief.plan_route(s.point, scenario.goal)
            except NoRoute as exc:
                elog.replans.append({"step": s.t, "invalidated": pid, "new_route_cost": None,
                                     "passages": None})
                notes.append(f"replan after invalidating {pid}: {exc}")
                return finish(False, "no_route", i + 1)
            elog.replans.append({"step": s.t, "invalidated": pid,
                                 "new_route_cost": _r(route.total_cost),
                                 "passages": list(route.passage_sequence)})
            elog.route_history.append(_route_record(route, s.t, "replan"))
        i += 1
        if goal_reached(graph, s.point, scenario.goal, scenario.goal_area):
            return finish(True, None, i)
    if s.t >= cfg.t_max:
        return finish(False, "t_max", i)
    return finish(False, "i_max", i)


# -- metrics --------------------------------------------------------------------------------


@dataclass
class MetricsReport:
    sr: float
    spl: float
    os: float
    ne: float
    rows: list

    def to_dict(self) -> dict:
        return {"SR": self.sr, "SPL": self.spl, "OS": self.os, "NE": self.ne,
                "episodes": len(self.rows), "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        import csv
        import io

        cols = ["scenario", "family", "level", "success", "spl", "oracle_success",
                "final_distance", "path_length", "shortest_path", "failure_reason", "collisions",
                "halts", "replans", "steps"]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: row.get(k) for k in cols})
        return buf.getvalue()


def _as_log(x) -> EpisodeLog:
    return x if isinstance(x, EpisodeLog) else EpisodeLog.from_dict(x)


def compute_metrics(logs, shortest, radius: float = SUCCESS_RADIUS) -> MetricsReport:
    """SR/OS in percent, SPL in [0, 1], NE in metres."""
    logs = [_as_log(x) for x in logs]
    shortest = list(shortest)
    if len(logs) != len(shortest):
        raise LengthMismatch(f"{len(logs)} logs but {len(shortest)} shortest paths")
    if not logs:
        raise LengthMismatch("no episodes")
    rows = []
    for lg, l_i in zip(logs, shortest):
        if l_i is None or not l_i > 0:
            raise NonpositiveShortestPath(f"{lg.scenario}: shortest path {l_i!r}")
        succ = 1.0 if lg.success else 0.0
        p_i = lg.path_length
        md = lg.terminal.get("min_distance")
        rows.append({
            "scenario": lg.scenario, "family": lg.family, "level": lg.instruction_level,
            "success": bool(succ), "spl": succ * l_i / max(p_i, l_i),
            "oracle_success": md is not None and md <= radius,
            "final_distance": lg.terminal.get("final_distance"),
            "path_length": p_i, "shortest_path": l_i,
            "failure_reason": lg.terminal.get("failure_reason"),
            "collisions": lg.collisions, "halts": len(lg.halts), "replans": len(lg.replans),
            "steps": lg.terminal.get("steps"),
        })
    n = len(rows)
    return MetricsReport(
        sr=100.0 * sum(r["success"] for r in rows) / n,
        spl=sum(r["spl"] for r in rows) / n,
        os=100.0 * sum(r["oracle_success"] for r in rows) / n,
        ne=sum(r["final_distance"] for r in rows) / n,
        rows=rows,
    )

"""Deterministic map layouts and scenario suites for tests and benchmarks.

Every layout is built from axis-aligned rectangles so costs and doorway
geometry can be checked by hand. Scenario suites come in three families:

* ``B``        obstacle-free
* ``O-detour`` one door on the pristine route blocked, a detour exists
* ``O-dead``   one door on the pristine route blocked, no detour exists

A family is empty when the layout's topology cannot express it (a two-room
map has no detour; a ring has no dead end).
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from haltnav.geometry import Point
from haltnav.osmag import Area, AreaGraph, Passage, serialize_map, validate
from haltnav.passage_graph import NoRoute, build_passage_graph

LAYOUTS = ("two_room", "t_corridor", "ring4", "grid", "multi_floor")
LEVELS = ("L0", "L1", "L2")
OBJECTS = ("chair", "sofa", "potted plant", "tv monitor", "bed", "dining table", "sink", "cabinet")


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class FixtureSpec:
    layout: str = "two_room"
    room_size: float = 8.0
    door_width: float = 0.9
    seed: int = 0
    rows: int = 3
    cols: int = 3
    max_tasks: int = 4
    resolution: float = 0.05

    def check(self):
        if self.layout not in LAYOUTS:
            raise InvalidSpec(f"unknown layout {self.layout!r}")
        if self.room_size <= 0 or self.door_width <= 0:
            raise InvalidSpec("room_size and door_width must be positive")
        if self.door_width >= self.room_size / 2:
            raise InvalidSpec("door_width must be well below room_size")
        if self.rows < 1 or self.cols < 1 or self.rows * self.cols < 2:
            raise InvalidSpec("grid layout needs at least two rooms")
        if self.max_tasks < 1:
            raise InvalidSpec("max_tasks must be positive")


def _rect(aid, x0, y0, x1, y1, area_type="room", level=0, name=None):
    poly = (Point(x0, y0, level), Point(x1, y0, level), Point(x1, y1, level),
            Point(x0, y1, level), Point(x0, y0, level))
    return Area(aid, name or aid, area_type, poly, level)


def _door(pid, a, b, x0, y0, x1, y1, level=0):
    return Passage(pid, (Point(x0, y0, level), Point(x1, y1, level)), a, b, level)


def _vdoor(pid, a, b, x, yc, w, level=0):
    return _door(pid, a, b, x, yc - w / 2, x, yc + w / 2, level)


def _hdoor(pid, a, b, xc, y, w, level=0):
    return _door(pid, a, b, xc - w / 2, y, xc + w / 2, y, level)


def build_layout(spec: FixtureSpec) -> AreaGraph:
    spec.check()
    s, w = spec.room_size, spec.door_width
    if spec.layout == "two_room":
        areas = [_rect("R1", 0, 0, s, s), _rect("R2", s, 0, 2 * s, s)]
        passages = [_vdoor("P12", "R1", "R2", s, s / 2, w)]
    elif spec.layout == "ring4":
        areas = [
            _rect("R1", 0, 0, s, s),
            _rect("R2", s, 0, 2 * s, s),
            _rect("R3", s, s, 2 * s, 2 * s),
            _rect("R4", 0, s, s, 2 * s),
        ]
        passages = [
            _vdoor("P12", "R1", "R2", s, s / 2, w),
            _hdoor("P23", "R2", "R3", 1.5 * s, s, w),
            _vdoor("P34", "R3", "R4", s, 1.5 * s, w),
            _hdoor("P14", "R1", "R4", s / 2, s, w),
        ]
    elif spec.layout == "grid":
        areas, passages = [], []
        for r in range(spec.rows):
            for c in range(spec.cols):
                areas.append(_rect(f"R{r}{c}", c * s, r * s, (c + 1) * s, (r + 1) * s))
        for r in range(spec.rows):
            for c in range(spec.cols):
                if c + 1 < spec.cols:
                    passages.append(_vdoor(f"P{r}{c}-{r}{c + 1}", f"R{r}{c}", f"R{r}{c + 1}",
                                           (c + 1) * s, (r + 0.5) * s, w))
                if r + 1 < spec.rows:
                    passages.append(_hdoor(f"P{r}{c}-{r + 1}{c}", f"R{r}{c}", f"R{r + 1}{c}",
                                           (c + 0.5) * s, (r + 1) * s, w))
    elif spec.layout == "t_corridor":
        cw = max(2.0, 2 * w)  # corridor width
        length = s + 2 * cw + 2.0
        stem = s / 2
        xm = length / 2
        corridor = (
            (0, 0), (xm - cw / 2, 0), (xm - cw / 2, -stem), (xm + cw / 2, -stem),
            (xm + cw / 2, 0), (length, 0), (length, cw), (0, cw), (0, 0),
        )
        areas = [
            Area("T", "T", "corridor", tuple(Point(x, y) for x, y in corridor)),
            _rect("A", -s, cw / 2 - s / 2, 0, cw / 2 + s / 2),
            _rect("B", length, cw / 2 - s / 2, length + s, cw / 2 + s / 2),
            _rect("C", xm - s / 2, -stem - s, xm + s / 2, -stem),
        ]
        passages = [
            _vdoor("PA", "A", "T", 0, cw / 2, w),
            _vdoor("PB", "T", "B", length, cw / 2, w),
            _hdoor("PC", "C", "T", xm, -stem, w),
        ]
    else:  # multi_floor
        e = max(2.0, 2 * w)
        areas = [
            _rect("R1", 0, 0, s, s, level=0),
            _rect("E0", s, s / 2 - e / 2, s + e, s / 2 + e / 2, "elevator", level=0),
            _rect("E1", s, s / 2 - e / 2, s + e, s / 2 + e / 2, "elevator", level=1),
            _rect("R2", 0, 0, s, s, level=1),
        ]
        passages = [
            _vdoor("P1E", "R1", "E0", s, s / 2, w, level=0),
            _vdoor("PE", "E0", "E1", s + e, s / 2, w, level=0),
            _vdoor("P2E", "E1", "R2", s, s / 2, w, level=1),
        ]
    return AreaGraph(areas, passages)


def _task_pairs(graph: AreaGraph, rng: random.Random, max_tasks: int):
    rooms = sorted(a.id for a in graph.areas.values() if a.area_type == "room")
    pairs = [(a, b) for a in rooms for b in rooms if a != b]
    if len(pairs) > max_tasks:
        pairs = sorted(rng.sample(pairs, max_tasks))
    return pairs


def _inner_point(area: Area, rng: random.Random, spread: float) -> Point:
    c = area.centroid
    x0, y0, x1, y1 = area.bbox()
    half = min(spread, (x1 - x0) / 4, (y1 - y0) / 4)
    return Point(round(c.x + rng.uniform(-half, half), 3),
                 round(c.y + rng.uniform(-half, half), 3), area.level)


def instruction_text(graph: AreaGraph, route_passages, start_area: str, goal_area: str,
                     obj: str, level: str) -> str:
    """Target instruction at one of the three granularity levels."""
    goal_name = graph.areas[goal_area].name
    if level == "L2":
        return f"Find the {obj} in {goal_name}."
    areas = [start_area]
    for pid in route_passages:
        areas.append(graph.passages[pid].other(areas[-1]))
    hops = [f"the door into {graph.areas[a].name}" for a in areas[1:]]
    if level == "L1":
        via = ", then ".join(hops) if hops else f"the {graph.areas[goal_area].area_type}"
        return f"Go through {via} and find the {obj} in {goal_name}."
    steps = [f"Leave {graph.areas[start_area].name} ({graph.areas[start_area].area_type})"]
    for a in areas[1:]:
        area = graph.areas[a]
        steps.append(f"walk straight through the door into {area.name} ({area.area_type})")
    steps.append(f"stop next to the {obj} in {goal_name}")
    return ", ".join(steps) + "."


def generate_fixture(spec: FixtureSpec, map_name: str = "map.osm"):
    """Return ``(map_xml, scenarios)`` for a layout; scenarios are plain dicts (YAML-ready)."""
    spec.check()
    graph = build_layout(spec)
    problems = validate(graph)
    if problems:
        raise InvalidSpec(f"layout {spec.layout} failed validation: {problems}")
    rng = random.Random(spec.seed)
    pg = build_passage_graph(graph, spec.resolution)
    scenarios = []
    for n, (sa, ga) in enumerate(_task_pairs(graph, rng, spec.max_tasks)):
        start = _inner_point(graph.areas[sa], rng, 1.0)
        goal = _inner_point(graph.areas[ga], rng, 1.0)
        heading = rng.randrange(0, 360, 15)
        obj = rng.choice(OBJECTS)
        route = pg.plan_route(start, goal)
        families = [("B", None)]
        detour = dead = None
        for pid in route.passage_sequence:
            trial = pg.copy().invalidate_passage(pid)
            try:
                trial.plan_route(start, goal)
                detour = detour or pid
            except NoRoute:
                dead = dead or pid
        if detour:
            families.append(("O-detour", detour))
        if dead:
            families.append(("O-dead", dead))
        for family, blocked in families:
            for level in LEVELS:
                scenarios.append({
                    "name": f"{spec.layout}-t{n}-{family}-{level}",
                    "family": family,
                    "map": map_name,
                    "start": {"x": start.x, "y": start.y, "level": start.level,
                              "heading_deg": float(heading)},
                    "goal": {"x": goal.x, "y": goal.y, "level": goal.level, "area": ga,
                             "object": obj},
                    "level": level,
                    "instruction": instruction_text(graph, route.passage_sequence, sa, ga, obj, level),
                    "obstacles": [{"blocks": blocked}] if blocked else [],
                    "seed": spec.seed * 1000 + n,
                    "resolution": spec.resolution,
                })
    return serialize_map(graph), scenarios


def default_suite_specs(seed: int = 0) -> list[FixtureSpec]:
    """The fixture corpus used by the acceptance suite."""
    return [
        FixtureSpec("two_room", seed=seed),
        FixtureSpec("t_corridor", seed=seed),
        FixtureSpec("ring4", seed=seed),
        FixtureSpec("grid", seed=seed, rows=3, cols=3),
        FixtureSpec("multi_floor", seed=seed),
    ]


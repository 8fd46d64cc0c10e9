"""osmAG area graphs: parsing, serialization, validation and point location.

The on-disk format is OSM-style XML. Nodes carry local metric coordinates
in ``local_x``/``local_y`` tags; ways tagged ``osmAG:type=area`` are closed
polygons and ways tagged ``osmAG:type=passage`` are two-node segments
shared by two areas (doorways, openings, elevator shafts).
"""

from __future__ import annotations

import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable

from haltnav import geometry as geo
from haltnav.geometry import Point

log = logging.getLogger(__name__)

AREA_TYPES = ("room", "corridor", "hall", "elevator", "stairs", "other")
VERTICAL_TYPES = ("elevator", "stairs")
DEFAULT_SNAP = 0.05

# tags interpreted by the parser; everything else is carried through verbatim
_AREA_KEYS = {"osmAG:type", "osmAG:areaType", "name", "level", "osmAG:parent"}
_PASSAGE_KEYS = {"osmAG:type", "osmAG:from", "osmAG:to", "level", "name"}
_NODE_KEYS = {"local_x", "local_y"}


class MapError(ValueError):
    """Base class for map documents that cannot be turned into a graph."""


class MapSyntaxError(MapError):
    pass


class MissingAreaRef(MapError):
    def __init__(self, ref: str, passage: str | None = None):
        self.ref = ref
        self.passage = passage
        where = f" (passage {passage})" if passage else ""
        super().__init__(f"unknown area {ref!r}{where}")


class OpenPolygon(MapError):
    def __init__(self, area: str):
        self.area = area
        super().__init__(f"area {area!r} polygon is not closed")


class DuplicateId(MapError):
    def __init__(self, ident: str):
        self.ident = ident
        super().__init__(f"duplicate id {ident!r}")


class UnknownArea(KeyError):
    pass


class UnknownPassage(KeyError):
    pass


@dataclass(frozen=True)
class Area:
    id: str
    name: str
    area_type: str
    polygon: tuple[Point, ...]
    level: int = 0
    parent_id: str | None = None
    tags: dict = field(default_factory=dict, compare=True, hash=False)

    @property
    def ring(self) -> list[tuple[float, float]]:
        return geo.ring(self.polygon)

    @property
    def centroid(self) -> Point:
        cx, cy = geo.centroid(self.polygon)
        return Point(cx, cy, self.level)

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [p.x for p in self.polygon]
        ys = [p.y for p in self.polygon]
        return min(xs), min(ys), max(xs), max(ys)

    def contains(self, p: Point) -> bool:
        if p.level != self.level:
            return False
        x0, y0, x1, y1 = self.bbox()
        if not (x0 - geo.EPS <= p.x <= x1 + geo.EPS and y0 - geo.EPS <= p.y <= y1 + geo.EPS):
            return False
        return geo.contains(self.ring, p.xy())


@dataclass(frozen=True)
class Passage:
    id: str
    endpoints: tuple[Point, Point]
    from_area: str
    to_area: str
    level: int = 0
    tags: dict = field(default_factory=dict, compare=True, hash=False)

    @property
    def width(self) -> float:
        return self.endpoints[0].dist(self.endpoints[1])

    @property
    def midpoint(self) -> Point:
        a, b = self.endpoints
        return Point((a.x + b.x) / 2.0, (a.y + b.y) / 2.0, self.level)

    @property
    def areas(self) -> tuple[str, str]:
        return (self.from_area, self.to_area)

    def other(self, area_id: str) -> str:
        if area_id == self.from_area:
            return self.to_area
        if area_id == self.to_area:
            return self.from_area
        raise UnknownArea(f"passage {self.id} does not touch area {area_id}")

    def segment(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return self.endpoints[0].xy(), self.endpoints[1].xy()


@dataclass(frozen=True)
class Violation:
    rule: str
    element: str
    detail: str = ""

    def __str__(self):
        return f"{self.rule}({self.element})" + (f": {self.detail}" if self.detail else "")


class AreaGraph:
    """Areas as nodes, passages as edges. Treated as immutable once built."""

    def __init__(self, areas: Iterable[Area], passages: Iterable[Passage], node_tags=None):
        self.areas: dict[str, Area] = {}
        self.passages: dict[str, Passage] = {}
        for a in areas:
            if a.id in self.areas:
                raise DuplicateId(a.id)
            self.areas[a.id] = a
        for p in passages:
            if p.id in self.passages or p.id in self.areas:
                raise DuplicateId(p.id)
            self.passages[p.id] = p
        self.node_tags: dict[tuple[float, float], dict] = dict(node_tags or {})
        adj: dict[str, set] = {a: set() for a in self.areas}
        for p in self.passages.values():
            for a in p.areas:
                adj.setdefault(a, set()).add(p.id)
        self.adjacency: dict[str, frozenset] = {k: frozenset(v) for k, v in adj.items()}

    def __eq__(self, other):
        if not isinstance(other, AreaGraph):
            return NotImplemented
        return (
            self.areas == other.areas
            and self.passages == other.passages
            and self.node_tags == other.node_tags
        )

    def __repr__(self):
        return f"AreaGraph(areas={len(self.areas)}, passages={len(self.passages)})"

    @property
    def levels(self) -> list[int]:
        return sorted({a.level for a in self.areas.values()})

    def area(self, area_id: str) -> Area:
        try:
            return self.areas[area_id]
        except KeyError:
            raise UnknownArea(area_id) from None

    def passage(self, passage_id: str) -> Passage:
        try:
            return self.passages[passage_id]
        except KeyError:
            raise UnknownPassage(passage_id) from None

    def passages_of(self, area_id: str) -> list[Passage]:
        return [self.passages[p] for p in sorted(self.adjacency.get(area_id, ()))]

    def is_cross_level(self, passage_id: str) -> bool:
        p = self.passage(passage_id)
        return self.areas[p.from_area].level != self.areas[p.to_area].level

    def bounds(self, level: int | None = None) -> tuple[float, float, float, float]:
        boxes = [a.bbox() for a in self.areas.values() if level is None or a.level == level]
        return (
            min(b[0] for b in boxes),
            min(b[1] for b in boxes),
            max(b[2] for b in boxes),
            max(b[3] for b in boxes),
        )


def locate(graph: AreaGraph, p: Point) -> str | None:
    """Area containing ``p`` on its level; shared boundaries go to the smallest id."""
    hits = [a.id for a in graph.areas.values() if a.contains(p)]
    return min(hits) if hits else None


def entry_point(graph: AreaGraph, passage_id: str, area_id: str, depth: float = 0.5) -> Point:
    """A point ``depth`` meters inside ``area_id``, straight across the passage midpoint."""
    p = graph.passage(passage_id)
    area = graph.area(area_id)
    if area_id not in p.areas:
        raise UnknownArea(f"passage {passage_id} does not touch area {area_id}")
    (ax, ay), (bx, by) = p.segment()
    mx, my = (ax + bx) / 2.0, (ay + by) / 2.0
    w = math.hypot(bx - ax, by - ay)
    nx, ny = -(by - ay) / w, (bx - ax) / w
    d = depth
    for _ in range(8):
        for sign in (1.0, -1.0):
            q = Point(mx + sign * d * nx, my + sign * d * ny, area.level)
            if area.contains(q) and geo.boundary_distance(q.xy(), area.ring) > 1e-6:
                return q
        d *= 0.5
    return Point(mx, my, area.level)


# -- validation --------------------------------------------------------------


def validate(graph: AreaGraph, snap: float = DEFAULT_SNAP) -> list[Violation]:
    out: list[Violation] = []
    levels = set(graph.levels)
    for a in graph.areas.values():
        poly = a.polygon
        if len(poly) < 2 or not poly[0].close_to(poly[-1]):
            out.append(Violation("OpenPolygon", a.id))
        pts = geo.ring(poly)
        distinct = {(round(x, 9), round(y, 9)) for x, y in pts}
        if len(distinct) < 3:
            out.append(Violation("DegeneratePolygon", a.id, f"{len(distinct)} distinct vertices"))
            continue
        if abs(geo.signed_area(pts)) <= geo.EPS:
            out.append(Violation("ZeroArea", a.id))
        hits = geo.self_intersections(pts)
        if hits:
            out.append(Violation("SelfIntersection", a.id, f"edges {hits[0][0]} and {hits[0][1]}"))
        if a.area_type not in AREA_TYPES:
            out.append(Violation("UnknownAreaType", a.id, a.area_type))
        if a.parent_id is not None and a.parent_id not in graph.areas:
            out.append(Violation("MissingAreaRef", a.id, f"parent {a.parent_id}"))
        if any(p.level != a.level for p in poly):
            out.append(Violation("LevelMismatch", a.id))
    for p in graph.passages.values():
        missing = [r for r in p.areas if r not in graph.areas]
        for r in missing:
            out.append(Violation("MissingAreaRef", p.id, r))
        if p.from_area == p.to_area:
            out.append(Violation("SelfLoopPassage", p.id))
        if p.width <= 0.0:
            out.append(Violation("ZeroWidth", p.id))
        if p.level not in levels:
            out.append(Violation("LevelOutOfRange", p.id, str(p.level)))
        if missing:
            continue
        fa, ta = graph.areas[p.from_area], graph.areas[p.to_area]
        if fa.level != ta.level and not (
            fa.area_type in VERTICAL_TYPES and ta.area_type in VERTICAL_TYPES
        ):
            out.append(Violation("CrossLevelPassage", p.id, "only elevator/stairs areas join levels"))
        off = False
        for e in p.endpoints:
            for area in (fa, ta):
                if geo.boundary_distance(e.xy(), area.ring) > snap:
                    off = True
        if off:
            out.append(Violation("EndpointOffBoundary", p.id))
    for aid, pids in graph.adjacency.items():
        for pid in pids:
            if pid not in graph.passages or aid not in graph.passages[pid].areas:
                out.append(Violation("AdjacencyMismatch", aid, pid))
    return out


# -- XML ---------------------------------------------------------------------


def _tags(el: ET.Element) -> dict[str, str]:
    out = {}
    for t in el.findall("tag"):
        k, v = t.get("k"), t.get("v")
        if k is None or v is None:
            raise MapSyntaxError(f"tag without k/v on {el.tag} {el.get('id')}")
        out[k] = v
    return out


def _int(value: str, what: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise MapSyntaxError(f"{what}: expected integer, got {value!r}") from None


def parse_map(text: str | bytes) -> AreaGraph:
    """Parse an osmAG XML document into an AreaGraph."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MapSyntaxError(f"malformed XML: {exc}") from None
    if root.tag != "osm":
        raise MapSyntaxError(f"root element is <{root.tag}>, expected <osm>")

    nodes: dict[str, tuple[float, float]] = {}
    node_tags: dict[tuple[float, float], dict] = {}
    for n in root.findall("node"):
        nid = n.get("id")
        if nid is None:
            raise MapSyntaxError("node without id")
        if nid in nodes:
            raise DuplicateId(nid)
        tags = _tags(n)
        try:
            xy = (float(tags["local_x"]), float(tags["local_y"]))
        except KeyError:
            raise MapSyntaxError(f"node {nid} lacks local_x/local_y") from None
        except ValueError:
            raise MapSyntaxError(f"node {nid} has non-numeric local coordinates") from None
        if not all(math.isfinite(c) for c in xy):
            raise MapSyntaxError(f"node {nid} has non-finite coordinates")
        nodes[nid] = xy
        extra = {k: v for k, v in tags.items() if k not in _NODE_KEYS}
        if extra:
            node_tags.setdefault(xy, {}).update(extra)

    area_ways, passage_ways = [], []
    seen: set[str] = set()
    for w in root.findall("way"):
        wid = w.get("id")
        if wid is None:
            raise MapSyntaxError("way without id")
        if wid in seen:
            raise DuplicateId(wid)
        seen.add(wid)
        refs = [nd.get("ref") for nd in w.findall("nd")]
        for r in refs:
            if r not in nodes:
                raise MapSyntaxError(f"way {wid} references missing node {r}")
        tags = _tags(w)
        kind = tags.get("osmAG:type")
        if kind == "area":
            area_ways.append((wid, refs, tags))
        elif kind == "passage":
            passage_ways.append((wid, refs, tags))
        else:
            log.debug("ignoring way %s without osmAG:type", wid)

    areas = []
    for wid, refs, tags in area_ways:
        if len(refs) < 2 or refs[0] != refs[-1]:
            raise OpenPolygon(wid)
        level = _int(tags.get("level", "0"), f"area {wid} level")
        poly = tuple(Point(*nodes[r], level) for r in refs)
        areas.append(
            Area(
                id=wid,
                name=tags.get("name", wid),
                area_type=tags.get("osmAG:areaType", "other"),
                polygon=poly,
                level=level,
                parent_id=tags.get("osmAG:parent"),
                tags={k: v for k, v in tags.items() if k not in _AREA_KEYS},
            )
        )
    by_id = {a.id: a for a in areas}
    by_name: dict[str, list[str]] = {}
    for a in areas:
        by_name.setdefault(a.name, []).append(a.id)

    def resolve(ref: str | None, pid: str) -> str:
        if ref is None:
            raise MapSyntaxError(f"passage {pid} lacks osmAG:from/osmAG:to")
        if ref in by_id:
            return ref
        hits = by_name.get(ref, [])
        if len(hits) == 1:
            return hits[0]
        if len(hits) > 1:
            raise MapSyntaxError(f"passage {pid}: area name {ref!r} is ambiguous")
        raise MissingAreaRef(ref, pid)

    passages = []
    for wid, refs, tags in passage_ways:
        if len(refs) != 2:
            raise MapSyntaxError(f"passage {wid} has {len(refs)} node refs, expected 2")
        fa = resolve(tags.get("osmAG:from"), wid)
        ta = resolve(tags.get("osmAG:to"), wid)
        level = _int(tags.get("level", str(by_id[fa].level)), f"passage {wid} level")
        passages.append(
            Passage(
                id=wid,
                endpoints=(Point(*nodes[refs[0]], level), Point(*nodes[refs[1]], level)),
                from_area=fa,
                to_area=ta,
                level=level,
                tags={k: v for k, v in tags.items() if k not in _PASSAGE_KEYS},
            )
        )
    return AreaGraph(areas, passages, node_tags)


def load_map(path) -> AreaGraph:
    with open(path, "rb") as fh:
        return parse_map(fh.read())


def _area_ref(graph: AreaGraph, area_id: str) -> str:
    name = graph.areas[area_id].name
    clash = sum(1 for a in graph.areas.values() if a.name == name) > 1
    if clash or (name in graph.areas and name != area_id):
        return area_id
    return name


def serialize_map(graph: AreaGraph) -> str:
    """Render ``graph`` as osmAG XML; ``parse_map`` inverts this exactly."""
    root = ET.Element("osm", version="0.6", generator="haltnav")
    node_ids: dict[tuple[float, float], str] = {}

    def node_for(p: Point) -> str:
        key = (p.x, p.y)
        if key not in node_ids:
            nid = str(len(node_ids) + 1)
            node_ids[key] = nid
            n = ET.SubElement(root, "node", id=nid, lat="0", lon="0")
            ET.SubElement(n, "tag", k="local_x", v=repr(p.x))
            ET.SubElement(n, "tag", k="local_y", v=repr(p.y))
            for k, v in sorted(graph.node_tags.get(key, {}).items()):
                ET.SubElement(n, "tag", k=k, v=v)
        return node_ids[key]

    ways = []
    for a in graph.areas.values():
        refs = [node_for(p) for p in a.polygon]
        tags = {
            "osmAG:type": "area",
            "osmAG:areaType": a.area_type,
            "name": a.name,
            "level": str(a.level),
        }
        if a.parent_id is not None:
            tags["osmAG:parent"] = a.parent_id
        tags.update(a.tags)
        ways.append((a.id, refs, tags))
    for p in graph.passages.values():
        refs = [node_for(e) for e in p.endpoints]
        tags = {
            "osmAG:type": "passage",
            "osmAG:from": _area_ref(graph, p.from_area),
            "osmAG:to": _area_ref(graph, p.to_area),
            "level": str(p.level),
        }
        tags.update(p.tags)
        ways.append((p.id, refs, tags))
    # orphan node tags (no geometry references them) still round-trip
    for key in graph.node_tags:
        if key not in node_ids:
            node_for(Point(key[0], key[1]))
    for wid, refs, tags in ways:
        w = ET.SubElement(root, "way", id=wid)
        for r in refs:
            ET.SubElement(w, "nd", ref=r)
        for k, v in tags.items():
            ET.SubElement(w, "tag", k=k, v=v)
    ET.indent(root, space="  ")
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"

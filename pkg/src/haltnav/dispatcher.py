"""Graph-grounded task dispatching: route + local map text -> next macro-action.

The default dispatcher is a template engine keyed on (kind, level). An
external process can stand in for it through the newline-delimited JSON
protocol in :mod:`haltnav.protocol`; any failure there falls back to the
templates and is recorded.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from haltnav import geometry as geo
from haltnav.geometry import Point
from haltnav.osmag import entry_point
from haltnav.passage_graph import INF, PassageGraph, Route

log = logging.getLogger(__name__)

KINDS = ("traverse_to_passage", "enter_area", "go_to_goal")
LEVELS = ("L0", "L1", "L2")
OUTCOMES = ("done", "halted_bottom_up", "halted_reflective")
HISTORY_WINDOW = 5
ENTRY_DEPTH = 0.5  # m past the doorway a traverse macro aims for


class RouteExhausted(RuntimeError):
    """No dispatchable hop remains: the caller should replan."""


@dataclass(frozen=True)
class TargetInstruction:
    text: str
    level: str
    goal: Point
    goal_area: str
    goal_object: str

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"instruction level must be one of {LEVELS}")


@dataclass(frozen=True)
class MacroAction:
    index: int
    kind: str
    instruction_text: str
    level: str
    target_passage: str | None = None
    target_area: str | None = None
    target_point: Point | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown macro kind {self.kind!r}")
        if self.kind == "traverse_to_passage" and not self.target_passage:
            raise ValueError("traverse_to_passage needs a target passage")
        if self.kind == "enter_area" and not self.target_area:
            raise ValueError("enter_area needs a target area")
        if not self.instruction_text.strip():
            raise ValueError("instruction_text must be nonempty")

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "kind": self.kind,
            "target_passage": self.target_passage,
            "target_area": self.target_area,
            "target_point": None if self.target_point is None else
            [self.target_point.x, self.target_point.y, self.target_point.level],
            "instruction_text": self.instruction_text,
            "level": self.level,
        }


@dataclass(frozen=True)
class HistoryEntry:
    macro: MacroAction
    outcome: str
    pose: tuple[float, float, float]


@dataclass
class History:
    entries: list[HistoryEntry] = field(default_factory=list)

    def append(self, macro: MacroAction, outcome: str, pose) -> None:
        if outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {outcome!r}")
        if self.entries and macro.index <= self.entries[-1].macro.index:
            raise ValueError("macro indices must increase")
        self.entries.append(HistoryEntry(macro, outcome, tuple(pose)))

    def __len__(self):
        return len(self.entries)

    def summary(self, n: int = HISTORY_WINDOW) -> list[dict]:
        return [
            {"index": e.macro.index, "kind": e.macro.kind, "target_passage": e.macro.target_passage,
             "instruction_text": e.macro.instruction_text, "outcome": e.outcome,
             "pose": list(e.pose)}
            for e in self.entries[-n:]
        ]


@dataclass(frozen=True)
class PassageLine:
    id: str
    to_area: str
    cost: float
    blocked: bool
    entry: Point


@dataclass(frozen=True)
class GraphContext:
    text: str
    area_id: str
    area_name: str
    area_type: str
    pose: Point
    heading: float
    passages: tuple[PassageLine, ...]
    remaining: tuple[str, ...]  # route passages still ahead, from the current area
    on_route: bool
    area_names: dict = field(hash=False, compare=False, default_factory=dict)
    area_types: dict = field(hash=False, compare=False, default_factory=dict)

    def passage(self, pid: str) -> PassageLine | None:
        return next((p for p in self.passages if p.id == pid), None)

    @property
    def next_hop(self) -> str | None:
        return self.remaining[0] if self.on_route and self.remaining else None


def _fmt_cost(c: float) -> str:
    return "inf" if c == INF else f"{c:.2f}"


def format_graph_context(belief: PassageGraph, pose: Point, route: Route,
                         heading: float = 0.0) -> GraphContext:
    """Deterministic text rendering of the agent's local subgraph and remaining route."""
    g = belief.source
    aid = belief.locate(pose)
    area = g.areas[aid]
    lines = [
        f"AREA {aid} name={area.name!r} type={area.area_type} level={area.level}",
        f"POSE x={pose.x:.2f} y={pose.y:.2f} heading={math.degrees(heading):.0f}deg",
    ]
    plines = []
    for p in g.passages_of(aid):
        to = p.other(aid)
        blocked = p.id in belief.blocked_passages or to in belief.blocked_areas
        cost = INF if blocked else belief.leg_cost(aid, pose, p.id)
        plines.append(PassageLine(p.id, to, cost, blocked,
                                  entry_point(g, p.id, to, ENTRY_DEPTH)))
        tag = " BLOCKED" if blocked else ""
        lines.append(f"PASSAGE {p.id} -> {to} ({g.areas[to].name}) cost={_fmt_cost(cost)}{tag}")
    if not plines:
        lines.append("no passages")
    else:
        lines.append("NEIGHBORS " + ", ".join(sorted({pl.to_area for pl in plines})))
    on_route = aid in route.areas
    remaining: tuple[str, ...] = ()
    if on_route:
        k = route.areas.index(aid)
        remaining = tuple(route.passage_sequence[k:])
        hops = []
        cur = aid
        for pid in remaining[:3]:
            cur = g.passages[pid].other(cur)
            mark = " BLOCKED" if pid in belief.blocked_passages else ""
            hops.append(f"{pid} -> {cur}{mark}")
        if len(remaining) <= 3:
            hops.append(f"GOAL {route.areas[-1]}")
        lines.append("ROUTE " + " | ".join(hops))
        nxt = f"traverse_to_passage {remaining[0]}" if remaining else "go_to_goal"
        lines.append(f"NEXT {nxt}")
    else:
        lines.append("ROUTE off-route (replan required)")
    names = {a.id: a.name for a in g.areas.values()}
    types = {a.id: a.area_type for a in g.areas.values()}
    return GraphContext("\n".join(lines) + "\n", aid, area.name, area.area_type, pose, heading,
                        tuple(plines), remaining, on_route, names, types)


# -- templates ---------------------------------------------------------------------


def _turn_phrase(pose: Point, heading: float, target: Point) -> str:
    b = math.degrees(geo.bearing_to(pose.x, pose.y, heading, target.x, target.y))
    if abs(b) <= 20.0:
        return "Go straight"
    if abs(b) >= 160.0:
        return "Turn around"
    return "Turn left" if b > 0 else "Turn right"


def render_text(kind: str, level: str, ctx: GraphContext, instruction: TargetInstruction,
                passage: str | None = None, to_area: str | None = None,
                target: Point | None = None) -> str:
    """Instruction text; each finer level prepends to the coarser one."""
    goal_name = ctx.area_names.get(instruction.goal_area, instruction.goal_area)
    text = f"Find the {instruction.goal_object} in {goal_name}."
    if level == "L2":
        return text
    if kind == "go_to_goal":
        text = f"You are in {ctx.area_name}, the {ctx.area_type}. " + text
    else:
        text = f"Go through the door between {ctx.area_name} and {ctx.area_names[to_area]}. " + text
    if level == "L1":
        return text
    dist = ctx.pose.dist(target) if target is not None else 0.0
    turn = _turn_phrase(ctx.pose, ctx.heading, target) if target is not None else "Go straight"
    if kind == "go_to_goal":
        return f"{turn} and walk about {dist:.1f} meters. " + text
    return (
        f"{turn} and walk about {dist:.1f} meters to door {passage} "
        f"of the {ctx.area_type} into the {ctx.area_types[to_area]}. " + text
    )


def dispatch_next(ctx: GraphContext, instruction: TargetInstruction, history: History) -> MacroAction:
    """Next macro-action, strictly hop by hop along the current route."""
    index = history.entries[-1].macro.index + 1 if len(history) else 0
    level = instruction.level
    if ctx.area_id == instruction.goal_area:
        text = render_text("go_to_goal", level, ctx, instruction, target=instruction.goal)
        return MacroAction(index, "go_to_goal", text, level, target_area=instruction.goal_area,
                           target_point=instruction.goal)
    hop = ctx.next_hop
    if hop is None:
        raise RouteExhausted(f"no remaining hop from {ctx.area_id}")
    line = ctx.passage(hop)
    if line is None or line.blocked:
        raise RouteExhausted(f"next hop {hop} is blocked or not incident to {ctx.area_id}")
    text = render_text("traverse_to_passage", level, ctx, instruction, passage=hop,
                       to_area=line.to_area, target=line.entry)
    return MacroAction(index, "traverse_to_passage", text, level, target_passage=hop,
                       target_area=line.to_area, target_point=line.entry)


class TemplateDispatcher:
    name = "oracle"

    def dispatch(self, ctx, instruction, history) -> MacroAction:
        return dispatch_next(ctx, instruction, history)


class ExternalDispatcher:
    """Dispatcher backed by a JSON-lines process.

    A failed request switches to the templates for the rest of the episode;
    a well-formed but unusable reply is rejected for that macro only.
    """

    name = "external"

    def __init__(self, client, notes: list | None = None):
        self.client = client
        self.notes = notes if notes is not None else []
        self.failed = False

    def dispatch(self, ctx, instruction, history) -> MacroAction:
        fallback = dispatch_next(ctx, instruction, history)
        if self.failed:
            return fallback
        request = {
            "type": "dispatch",
            "graph_context": ctx.text,
            "instruction": instruction.text,
            "history": history.summary(),
        }
        try:
            reply = self.client.request(request)
            ma = reply["macro_action"]
            kind = ma["kind"]
            text = str(ma["instruction_text"])
            pid = ma.get("target_passage")
        except Exception as exc:  # noqa: BLE001 - any backend fault means fallback
            self.failed = True
            self.notes.append(f"dispatch fallback at macro {fallback.index}: {exc}")
            log.warning("dispatcher backend failed (%s); using templates", exc)
            return fallback
        if kind == "go_to_goal" and ctx.area_id == instruction.goal_area:
            return MacroAction(fallback.index, kind, text or fallback.instruction_text,
                               instruction.level, target_area=instruction.goal_area,
                               target_point=instruction.goal)
        line = ctx.passage(pid) if kind == "traverse_to_passage" and pid else None
        if line is None or line.blocked:
            self.notes.append(f"dispatch fallback at macro {fallback.index}: rejected reply {ma!r}")
            return fallback
        return MacroAction(fallback.index, kind, text or fallback.instruction_text,
                           instruction.level, target_passage=pid, target_area=line.to_area,
                           target_point=line.entry)

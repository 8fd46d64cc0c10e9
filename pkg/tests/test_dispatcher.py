import pathlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haltnav import raster
from haltnav.dispatcher import (
    LEVELS,
    ExternalDispatcher,
    History,
    MacroAction,
    RouteExhausted,
    TargetInstruction,
    dispatch_next,
    format_graph_context,
)
from haltnav.geometry import Point
from haltnav.osmag import Area, AreaGraph
from haltnav.passage_graph import NoRoute, UnlocatedPoint, build_passage_graph

from oracles import counts_cost, grid_dijkstra_counts, route_oracle

GOLDEN = pathlib.Path(__file__).parent / "golden"


def instruction(level, goal, area, obj="chair"):
    return TargetInstruction(f"find the {obj}", level, goal, area, obj)


@pytest.fixture
def two_room(pgs):
    pg = pgs["two_room"].copy()
    g = pg.source
    start, goal = g.areas["R1"].centroid, g.areas["R2"].centroid
    return pg, start, goal


def test_golden_context(two_room):
    pg, start, goal = two_room
    ctx = format_graph_context(pg, start, pg.plan_route(start, goal))
    assert ctx.text == (GOLDEN / "two_room_context.txt").read_text()
    assert "AREA R1" in ctx.text and "PASSAGE P12 -> R2" in ctx.text


def test_context_cost_matches_grid_oracle(two_room):
    pg, start, goal = two_room
    grid = pg.grids["R1"]
    counts = grid_dijkstra_counts(grid.cells, pg.point_cell("R1", start), pg.anchors[("R1", "P12")])
    ctx = format_graph_context(pg, start, pg.plan_route(start, goal))
    assert f"cost={counts_cost(counts, pg.resolution):.2f}" in ctx.text


def test_isolated_area_has_no_passages():
    ring = tuple(Point(x, y) for x, y in [(0, 0), (4, 0), (4, 4), (0, 4), (0, 0)])
    pg = build_passage_graph(AreaGraph([Area("solo", "solo", "room", ring)], []), 0.1)
    p = Point(2, 2)
    ctx = format_graph_context(pg, p, pg.plan_route(p, Point(3, 3)))
    assert "AREA solo" in ctx.text and "no passages" in ctx.text


def test_blocked_marker(two_room):
    pg, start, goal = two_room
    route = pg.plan_route(start, goal)
    pg.invalidate_passage("P12")
    ctx = format_graph_context(pg, start, route)
    line = next(l for l in ctx.text.splitlines() if l.startswith("PASSAGE P12"))
    assert "BLOCKED" in line


def test_unlocated_pose(two_room):
    pg, start, goal = two_room
    with pytest.raises(UnlocatedPoint):
        format_graph_context(pg, Point(-5, -5), pg.plan_route(start, goal))


def test_template_golden(two_room):
    pg, start, goal = two_room
    ctx = format_graph_context(pg, start, pg.plan_route(start, goal))
    texts = [dispatch_next(ctx, instruction(lv, goal, "R2"), History()).instruction_text for lv in LEVELS]
    assert texts == (GOLDEN / "two_room_templates.txt").read_text().splitlines()
    m = dispatch_next(ctx, instruction("L1", goal, "R2"), History())
    assert m.kind == "traverse_to_passage" and m.target_passage == "P12"
    assert m.instruction_text.startswith("Go through the door between R1 and R2")


def test_goal_in_current_area(two_room):
    pg, start, _ = two_room
    goal = Point(6, 6)
    ctx = format_graph_context(pg, start, pg.plan_route(start, goal))
    for lv in LEVELS:
        m = dispatch_next(ctx, instruction(lv, goal, "R1", "red mug"), History())
        assert m.kind == "go_to_goal" and "red mug" in m.instruction_text


def test_dispatch_after_reflective_halt_follows_recomputed_route(pgs):
    pg = pgs["ring4"].copy()
    g = pg.source
    start, goal = g.areas["R1"].centroid, g.areas["R3"].centroid
    first = pg.plan_route(start, goal)
    ins = instruction("L1", goal, "R3")
    hist = History()
    m0 = dispatch_next(format_graph_context(pg, start, first), ins, hist)
    blocked = m0.target_passage
    hist.append(m0, "halted_reflective", (start.x, start.y, 0.0))
    pg.invalidate_passage(blocked)
    route = pg.plan_route(start, goal)
    assert route.passage_sequence == route_oracle(pg, start, goal)[1]
    m1 = dispatch_next(format_graph_context(pg, start, route), ins, hist)
    assert m1.target_passage == route.passage_sequence[0] != blocked
    assert m1.index == m0.index + 1


def test_route_exhausted(two_room):
    pg, start, goal = two_room
    route = pg.plan_route(start, goal)
    pg.invalidate_passage("P12")
    with pytest.raises(RouteExhausted):
        dispatch_next(format_graph_context(pg, start, route), instruction("L1", goal, "R2"), History())
    with pytest.raises(NoRoute):
        pg.plan_route(start, goal)
    # off-route pose: R2 is not on a route planned inside R1
    inside = pg.copy().reset().plan_route(start, Point(6, 6))
    with pytest.raises(RouteExhausted):
        dispatch_next(format_graph_context(pg.copy().reset(), goal, inside), instruction("L1", goal, "R9"), History())


def test_history_rules(two_room):
    pg, start, goal = two_room
    ctx = format_graph_context(pg, start, pg.plan_route(start, goal))
    ins = instruction("L2", goal, "R2")
    h = History()
    m = dispatch_next(ctx, ins, h)
    h.append(m, "done", (0, 0, 0))
    with pytest.raises(ValueError):
        h.append(m, "done", (0, 0, 0))
    with pytest.raises(ValueError):
        h.append(dispatch_next(ctx, ins, h), "lost", (0, 0, 0))
    for _ in range(7):
        h.append(dispatch_next(ctx, ins, h), "halted_bottom_up", (0, 0, 0))
    assert len(h) == 8 and len(h.summary()) == 5
    assert h.summary()[-1]["index"] == 7


def test_macro_invariants():
    with pytest.raises(ValueError):
        MacroAction(0, "traverse_to_passage", "go", "L1")
    with pytest.raises(ValueError):
        MacroAction(0, "enter_area", "go", "L1")
    with pytest.raises(ValueError):
        MacroAction(0, "go_to_goal", "  ", "L1")
    with pytest.raises(ValueError):
        MacroAction(0, "fly", "go", "L1")


def random_context(pg, seed):
    import random

    rnd = random.Random(seed)
    g = pg.source
    areas = sorted(g.areas)
    a, b = rnd.choice(areas), rnd.choice(areas)
    ca, cb = g.areas[a].centroid, g.areas[b].centroid
    for pid in rnd.sample(sorted(pg.passages), k=rnd.randint(0, min(2, len(pg.passages)))):
        pg.invalidate_passage(pid)
    try:
        route = pg.plan_route(ca, cb)
    except NoRoute:
        return None
    return format_graph_context(pg, ca, route, heading=rnd.uniform(-3, 3)), cb, b


@settings(max_examples=60)
@given(layout=st.sampled_from(["ring4", "grid", "t_corridor", "two_room"]), seed=st.integers(0, 10_000))
def test_dispatch_properties(pgs, layout, seed):
    pg = pgs[layout].copy()
    got = random_context(pg, seed)
    if got is None:
        return
    ctx, goal, goal_area = got
    texts = []
    for lv in LEVELS:
        ins = instruction(lv, goal, goal_area)
        m = dispatch_next(ctx, ins, History())
        assert m == dispatch_next(ctx, ins, History())  # deterministic
        assert m.target_passage not in pg.blocked_passages
        assert m.target_area not in pg.blocked_areas
        texts.append(m.instruction_text)
    n0, n1, n2 = (len(t.split()) for t in texts)
    assert n0 > n1 > n2


class FakeClient:
    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []

    def request(self, payload):
        self.requests.append(payload)
        r = self.replies.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


def test_external_dispatcher_accepts_and_falls_back(two_room):
    pg, start, goal = two_room
    ctx = format_graph_context(pg, start, pg.plan_route(start, goal))
    ins = instruction("L1", goal, "R2")
    notes = []
    good = {"macro_action": {"kind": "traverse_to_passage", "target_passage": "P12",
                             "instruction_text": "head east through the door"}}
    bad = {"macro_action": {"kind": "traverse_to_passage", "target_passage": "NOPE",
                            "instruction_text": "x"}}
    client = FakeClient([good, bad, TimeoutError("slow"), good])
    d = ExternalDispatcher(client, notes)
    assert d.dispatch(ctx, ins, History()).instruction_text == "head east through the door"
    assert client.requests[0]["type"] == "dispatch" and client.requests[0]["graph_context"] == ctx.text
    templ = dispatch_next(ctx, ins, History())
    assert d.dispatch(ctx, ins, History()) == templ and "rejected" in notes[-1]
    assert d.dispatch(ctx, ins, History()) == templ and d.failed
    assert d.dispatch(ctx, ins, History()) == templ and len(client.requests) == 3

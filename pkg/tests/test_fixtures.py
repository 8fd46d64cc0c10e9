import itertools

import pytest
from haltnav.episode import Scenario, run_episode
from haltnav.fixtures import FixtureSpec, InvalidSpec, build_layout, default_suite_specs, generate_fixture
from haltnav.osmag import parse_map, validate
from haltnav.geometry import Point
from haltnav.passage_graph import NoRoute

from oracles import route_oracle


def test_ring4_shape_and_detour(graphs, pgs):
    g = graphs["ring4"]
    assert len(g.areas) == 4 and len(g.passages) == 4
    xml, scenarios = generate_fixture(FixtureSpec("ring4"))
    detours = [s for s in scenarios if s["family"] == "O-detour"]
    assert detours
    for s in detours:
        pg = pgs["ring4"].copy()
        a = Point(s["start"]["x"], s["start"]["y"])
        b = Point(s["goal"]["x"], s["goal"]["y"])
        pristine = route_oracle(pg, a, b)
        pg.invalidate_passage(s["obstacles"][0]["blocks"])
        pruned = route_oracle(pg, a, b)
        assert pruned is not None and pruned[1] != pristine[1]
        assert s["obstacles"][0]["blocks"] in pristine[1]


def test_two_room_dead_end(pgs):
    _, scenarios = generate_fixture(FixtureSpec("two_room"))
    dead = [s for s in scenarios if s["family"] == "O-dead"]
    assert dead and {s["obstacles"][0]["blocks"] for s in dead} == {"P12"}
    pg = pgs["two_room"].copy().invalidate_passage("P12")
    for s in dead:
        with pytest.raises(NoRoute):
            pg.plan_route(Point(s["start"]["x"], s["start"]["y"]), Point(s["goal"]["x"], s["goal"]["y"]))


def test_grid_connectivity(graphs, pgs):
    g = graphs["grid"]
    assert len(g.areas) == 9 and len(g.passages) == 12
    pg = pgs["grid"]
    for a, b in itertools.permutations(sorted(g.areas), 2):
        r = pg.plan_route(g.areas[a].centroid, g.areas[b].centroid)
        assert r.areas[0] == a and r.areas[-1] == b


def test_grid_other_sizes():
    g = build_layout(FixtureSpec("grid", rows=2, cols=4))
    assert len(g.areas) == 8 and len(g.passages) == 2 * 3 + 4


@pytest.mark.parametrize("spec", default_suite_specs(0) + default_suite_specs(7), ids=lambda s: f"{s.layout}-{s.seed}")
def test_generated_maps_validate(spec):
    xml, scenarios = generate_fixture(spec)
    assert validate(parse_map(xml)) == []
    families = {s["family"] for s in scenarios}
    assert "B" in families and families <= {"B", "O-detour", "O-dead"}
    for s in scenarios:
        assert s["level"] in ("L0", "L1", "L2")
    by_task = {}
    for s in scenarios:
        by_task.setdefault((s["name"].rsplit("-", 1)[0]), set()).add(s["level"])
    assert all(v == {"L0", "L1", "L2"} for v in by_task.values())


def test_generation_is_deterministic():
    assert generate_fixture(FixtureSpec("grid", seed=3)) == generate_fixture(FixtureSpec("grid", seed=3))
    assert generate_fixture(FixtureSpec("grid", seed=3)) != generate_fixture(FixtureSpec("grid", seed=4))


@pytest.mark.parametrize("bad", [dict(layout="maze"), dict(room_size=-1), dict(door_width=0),
                                 dict(door_width=7.9), dict(layout="grid", rows=1, cols=1), dict(max_tasks=0)])
def test_invalid_specs(bad):
    with pytest.raises(InvalidSpec):
        generate_fixture(FixtureSpec(**bad))


def test_every_b_scenario_succeeds(suite):
    b = [(d, p) for d, p in suite if d["family"] == "B"]
    assert b
    for d, p in b:
        log = run_episode(Scenario.load(p))
        assert log.success, d["name"]

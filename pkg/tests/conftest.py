import sys
import pathlib

import pytest
from hypothesis import HealthCheck, settings

from haltnav.fixtures import FixtureSpec, build_layout, default_suite_specs, generate_fixture
from haltnav.passage_graph import build_passage_graph

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

LAYOUTS = ("two_room", "t_corridor", "ring4", "grid", "multi_floor")


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory) -> pathlib.Path:
    """Fixture maps and scenario YAML files for the default suite."""
    import yaml

    out = tmp_path_factory.mktemp("fixtures")
    for spec in default_suite_specs(0):
        xml, scenarios = generate_fixture(spec, f"{spec.layout}.osm")
        (out / f"{spec.layout}.osm").write_text(xml)
        for d in scenarios:
            (out / f"{d['name']}.yaml").write_text(yaml.safe_dump(d, sort_keys=True))
    return out


@pytest.fixture(scope="session")
def suite(fixture_dir):
    """All generated scenarios as (dict, path) pairs."""
    import yaml

    return [(yaml.safe_load(p.read_text()), p) for p in sorted(fixture_dir.glob("*.yaml"))]


@pytest.fixture(scope="session")
def graphs():
    return {lay: build_layout(FixtureSpec(lay)) for lay in LAYOUTS}


@pytest.fixture(scope="session")
def pgs(graphs):
    return {lay: build_passage_graph(g, 0.05) for lay, g in graphs.items()}


@pytest.fixture(scope="session")
def two_room_map(fixture_dir):
    return fixture_dir / "two_room.osm"


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.acceptance_lines():
        terminalreporter.write_line(line)

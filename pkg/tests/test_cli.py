import hashlib
import json
import pathlib
import shutil
import subprocess
import sys

import numpy as np
import pytest

from haltnav import raster
from haltnav.cli import main
from haltnav.episode import EpisodeLog
from haltnav.geometry import Point
from haltnav.osmag import parse_map
from haltnav.passage_graph import build_passage_graph
from haltnav.report import FREE, GOAL, ROUTE_COLORS, START, WALL, read_ppm

GOLDEN = pathlib.Path(__file__).parent / "golden"
ECHO = f"{sys.executable} {pathlib.Path(__file__).parent / 'backends' / 'echo_backend.py'}"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# -- validate --------------------------------------------------------------------


def test_validate_ok(capsys, two_room_map):
    before = two_room_map.read_bytes()
    code, out, _ = run(capsys, "validate", "--map", two_room_map)
    assert code == 0 and out.startswith("OK 2 areas, 1 passages")
    assert two_room_map.read_bytes() == before


def test_validate_missing_area_ref(capsys, two_room_map, tmp_path):
    bad = tmp_path / "bad.osm"
    text = two_room_map.read_text()
    bad.write_text(text.replace('<tag k="osmAG:to" v="R2" />', '<tag k="osmAG:to" v="R9" />'))
    code, out, _ = run(capsys, "validate", "--map", bad)
    assert code == 1 and "P12" in out


def test_validate_not_a_map(capsys, tmp_path):
    junk = tmp_path / "junk.osm"
    junk.write_text("this is not xml <<<")
    assert run(capsys, "validate", "--map", junk)[0] == 2
    assert run(capsys, "validate", "--map", tmp_path / "missing.osm")[0] == 2


# -- plan --------------------------------------------------------------------------


def test_plan_matches_plan_route(capsys, two_room_map):
    code, out, _ = run(capsys, "plan", "--map", two_room_map, "--start", "2,2", "--goal", "13,6")
    pg = build_passage_graph(parse_map(two_room_map.read_text()), raster.DEFAULT_RESOLUTION)
    r = pg.plan_route(Point(2, 2), Point(13, 6))
    assert code == 0 and out.strip() == f"P12, cost={r.total_cost:.2f}m"


def test_plan_blocked(capsys, two_room_map):
    code, out, _ = run(capsys, "plan", "--map", two_room_map, "--start", "2,2", "--goal", "13,6",
                       "--block", "P12")
    assert code == 1 and out.startswith("NO ROUTE")


def test_plan_same_area(capsys, two_room_map):
    code, out, _ = run(capsys, "plan", "--map", two_room_map, "--start", "1,5", "--goal", "7,5")
    assert code == 0 and out.startswith("cost=")
    assert 5.9 < float(out.strip()[5:-1]) < 6.1


def test_plan_bad_args(capsys, two_room_map):
    with pytest.raises(SystemExit) as e:
        main(["plan", "--map", str(two_room_map), "--start", "two", "--goal", "13,6"])
    assert e.value.code == 2
    code, _, err = run(capsys, "plan", "--map", two_room_map, "--start", "2,2", "--goal", "13,6",
                       "--block", "NOPE")
    assert code == 2 and "NOPE" in err


def test_plan_export_costs(capsys, two_room_map, tmp_path):
    out = tmp_path / "costs.txt"
    code, _, _ = run(capsys, "plan", "--map", two_room_map, "--start", "2,2", "--goal", "13,6",
                     "--export-costs", out)
    assert code == 0 and out.exists()


# -- run / batch -----------------------------------------------------------------


def test_run_writes_log(capsys, fixture_dir, tmp_path):
    out = tmp_path / "log.json"
    code, stdout, _ = run(capsys, "run", "--scenario", fixture_dir / "ring4-t0-O-detour-L1.yaml",
                          "--out", out, "--figure", tmp_path / "fig.png", "--render", tmp_path / "r.ppm")
    assert code == 0 and "SUCCESS" in stdout
    log = EpisodeLog.from_json(out.read_text())
    assert log.success and len(log.replans) == 1
    assert (tmp_path / "fig.png").read_bytes()[:4] == b"\x89PNG"
    assert read_ppm((tmp_path / "r.ppm").read_bytes()).ndim == 3


def test_run_flags(capsys, fixture_dir, tmp_path):
    out = tmp_path / "log.json"
    code, stdout, _ = run(capsys, "run", "--scenario", fixture_dir / "ring4-t0-O-detour-L1.yaml",
                          "--out", out, "--rvh-mode", "off", "--seed-override", "9", "--resolution", "0.1")
    log = EpisodeLog.from_json(out.read_text())
    assert code == 0 and log.seed == 9 and log.config["resolution"] == 0.1
    assert log.config["rvh"]["mode"] == "off" and log.replans == []


def test_run_unreadable_scenario(capsys, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("start: [1, 2\n")
    assert run(capsys, "run", "--scenario", bad)[0] == 2
    assert run(capsys, "run", "--scenario", tmp_path / "nope.yaml")[0] == 2


def test_run_bad_backend(capsys, fixture_dir):
    code, _, err = run(capsys, "run", "--scenario", fixture_dir / "two_room-t0-B-L1.yaml",
                       "--backend-vlm", "telepathy")
    assert code == 2


def pick(fixture_dir, tmp_path, names):
    d = tmp_path / "scen"
    d.mkdir()
    for n in names:
        shutil.copy(fixture_dir / f"{n}.yaml", d)
    for m in fixture_dir.glob("*.osm"):
        shutil.copy(m, d)
    return d


def test_batch_metrics_and_rerun(capsys, fixture_dir, tmp_path):
    d = pick(fixture_dir, tmp_path, ["two_room-t0-B-L1", "two_room-t0-O-dead-L1", "ring4-t0-O-detour-L2"])
    out1, out2 = tmp_path / "b1", tmp_path / "b2"
    assert run(capsys, "batch", "--scenario", d, "--out", out1)[0] == 0
    assert run(capsys, "batch", "--scenario", d, "--out", out2, "--jobs", "2")[0] == 0
    metrics = json.loads((out1 / "metrics.json").read_text())
    assert {"SR", "SPL", "OS", "NE"} <= set(metrics) and metrics["episodes"] == 3
    assert metrics["SR"] == pytest.approx(200 / 3)
    assert (out1 / "metrics.csv").read_text().count("\n") == 4
    logs1 = sorted((out1 / "logs").glob("*.json"))
    assert len(logs1) == 3
    for p in logs1:
        assert p.read_bytes() == (out2 / "logs" / p.name).read_bytes()
    assert (out1 / "metrics.json").read_bytes() == (out2 / "metrics.json").read_bytes()


def test_batch_unreachable_backend(capsys, fixture_dir, tmp_path):
    d = pick(fixture_dir, tmp_path, ["ring4-t0-O-detour-L1"])
    code, _, _ = run(capsys, "batch", "--scenario", d, "--out", tmp_path / "o",
                     "--backend-dispatch", "external:tcp://127.0.0.1:1", "--timeout", "1")
    assert code == 0
    log = EpisodeLog.from_json((tmp_path / "o" / "logs" / "ring4-t0-O-detour-L1.json").read_text())
    assert log.success and any("dispatch fallback" in n for n in log.notes)


def test_batch_external_backends(capsys, fixture_dir, tmp_path):
    d = pick(fixture_dir, tmp_path, ["grid-t0-O-detour-L1"])
    code, _, _ = run(capsys, "batch", "--scenario", d, "--out", tmp_path / "o",
                     "--backend-dispatch", f"external:{ECHO}", "--backend-exec", f"external:{ECHO}",
                     "--backend-vlm", f"external:{ECHO}")
    assert code == 0
    assert json.loads((tmp_path / "o" / "metrics.json").read_text())["SR"] == 100.0


def test_batch_unreadable(capsys, tmp_path):
    d = tmp_path / "s"
    d.mkdir()
    (d / "x.yaml").write_text("- just a list\n")
    assert run(capsys, "batch", "--scenario", d, "--out", tmp_path / "o")[0] == 2
    assert not (tmp_path / "o" / "metrics.json").exists()


# -- render ------------------------------------------------------------------------


def render(capsys, map_path, log_path, out):
    args = ["render", "--map", map_path, "--out", out]
    if log_path is not None:
        args += ["--log", log_path]
    code, _, _ = run(capsys, *args)
    assert code == 0
    return read_ppm(out.read_bytes())


def colors(img):
    return {tuple(c) for c in img.reshape(-1, 3)}


def test_render_map_only(capsys, two_room_map, tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text("")
    img = render(capsys, two_room_map, empty, tmp_path / "m.ppm")
    grid = raster.rasterize_level(parse_map(two_room_map.read_text()), 0, raster.DEFAULT_RESOLUTION)
    expect = np.where(grid.cells[::-1, :, None], np.array(WALL, np.uint8), np.array(FREE, np.uint8))
    assert np.array_equal(img, expect)
    assert np.array_equal(render(capsys, two_room_map, None, tmp_path / "n.ppm"), expect)


def test_render_obstacle_free_golden(capsys, fixture_dir, two_room_map, tmp_path):
    log = tmp_path / "log.json"
    run(capsys, "run", "--scenario", fixture_dir / "two_room-t0-B-L1.yaml", "--out", log)
    out = tmp_path / "img.ppm"
    img = render(capsys, two_room_map, log, out)
    c = colors(img)
    assert ROUTE_COLORS[0] in c and ROUTE_COLORS[1] not in c and START in c and GOAL in c
    el = EpisodeLog.from_json(log.read_text())
    grid = raster.rasterize_level(parse_map(two_room_map.read_text()), 0, raster.DEFAULT_RESOLUTION)
    col, row = raster.world_to_cell(grid, (el.goal["x"], el.goal["y"]))
    assert tuple(img[grid.height - 1 - row, col]) == GOAL
    golden = json.loads((GOLDEN / "render_hashes.json").read_text())
    assert hashlib.sha256(out.read_bytes()).hexdigest() == golden["two_room-t0-B-L1"]


def test_render_replan_two_colors(capsys, fixture_dir, tmp_path):
    log = tmp_path / "log.json"
    run(capsys, "run", "--scenario", fixture_dir / "ring4-t0-O-detour-L1.yaml", "--out", log)
    out = tmp_path / "img.ppm"
    img = render(capsys, fixture_dir / "ring4.osm", log, out)
    c = colors(img)
    assert ROUTE_COLORS[0] in c and ROUTE_COLORS[1] in c
    golden = json.loads((GOLDEN / "render_hashes.json").read_text())
    assert hashlib.sha256(out.read_bytes()).hexdigest() == golden["ring4-t0-O-detour-L1"]


def test_render_schema_mismatch(capsys, two_room_map, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": "other/2"}))
    assert run(capsys, "render", "--map", two_room_map, "--log", bad, "--out", tmp_path / "x.ppm")[0] == 2


# -- fixtures and entry point ------------------------------------------------------


def test_fixtures_command(capsys, tmp_path):
    code, out, _ = run(capsys, "fixtures", "--out", tmp_path, "--layout", "ring4")
    assert code == 0 and (tmp_path / "ring4.osm").exists()
    assert len(list(tmp_path.glob("ring4-*.yaml"))) > 0


def test_console_entry_point(two_room_map):
    p = subprocess.run([sys.executable, "-m", "haltnav.cli", "plan", "--map", str(two_room_map),
                        "--start", "2,2", "--goal", "13,6", "--block", "P12"], capture_output=True, text=True)
    assert p.returncode == 1 and "NO ROUTE" in p.stdout

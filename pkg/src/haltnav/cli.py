"""``haltnav`` command line: validate, plan, run, batch, render, fixtures.

Exit codes: 0 success, 1 domain failure (no route, validation hits),
2 usage or I/O error. Set HALTNAV_LOG_LEVEL (e.g. DEBUG) for verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from haltnav import raster
from haltnav.episode import (
    Backends,
    EpisodeConfig,
    EpisodeLog,
    Scenario,
    ScenarioInvalid,
    compute_metrics,
    load_bundle,
    run_episode,
)
from haltnav.geometry import Point
from haltnav.osmag import DuplicateId, MapError, MissingAreaRef, OpenPolygon, load_map, validate
from haltnav.passage_graph import NoRoute, UnlocatedPoint, build_passage_graph
from haltnav.protocol import DEFAULT_TIMEOUT

log = logging.getLogger("haltnav")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def write_atomic(path, data) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _point(text: str) -> Point:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y[,level], got {text!r}") from None
    if len(vals) not in (2, 3):
        raise argparse.ArgumentTypeError(f"expected x,y[,level], got {text!r}")
    return Point(vals[0], vals[1], int(vals[2]) if len(vals) == 3 else 0)


def _load_map(path):
    try:
        return load_map(path)
    except OSError as exc:
        raise UsageError(f"cannot read map {path}: {exc}") from exc
    except MapError as exc:
        raise UsageError(f"cannot parse map {path}: {exc}") from exc


# -- commands ---------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        graph = load_map(args.map)
    except OSError as exc:
        raise UsageError(f"cannot read map {args.map}: {exc}") from exc
    except MissingAreaRef as exc:
        print(f"MissingAreaRef passage={exc.passage}: unknown area {exc.ref!r}")
        return EXIT_DOMAIN
    except OpenPolygon as exc:
        print(f"OpenPolygon area={exc.area}: polygon is not closed")
        return EXIT_DOMAIN
    except DuplicateId as exc:
        print(f"DuplicateId {exc.ident}: id used twice")
        return EXIT_DOMAIN
    except MapError as exc:
        raise UsageError(f"cannot parse map {args.map}: {exc}") from exc
    problems = validate(graph)
    for v in problems:
        print(v)
    if problems:
        return EXIT_DOMAIN
    print(f"OK {len(graph.areas)} areas, {len(graph.passages)} passages")
    return EXIT_OK


def cmd_plan(args) -> int:
    graph = _load_map(args.map)
    try:
        pg = build_passage_graph(graph, args.resolution)
        for pid in args.block:
            pg.invalidate_passage(pid)
        for aid in args.block_area:
            pg.invalidate_area(aid)
    except KeyError as exc:
        raise UsageError(f"unknown element {exc}") from exc
    except raster.RasterError as exc:
        raise UsageError(str(exc)) from exc
    if args.export_costs:
        write_atomic(args.export_costs, pg.export_costs())
    try:
        route = pg.plan_route(args.start, args.goal)
    except UnlocatedPoint as exc:
        raise UsageError(str(exc)) from exc
    except NoRoute as exc:
        print(f"NO ROUTE: {exc}")
        return EXIT_DOMAIN
    print(", ".join(list(route.passage_sequence) + [f"cost={route.total_cost:.2f}m"]))
    if args.verbose:
        print("areas: " + " -> ".join(route.areas))
    return EXIT_OK


def _config(args) -> tuple[EpisodeConfig, dict, Backends]:
    overrides = {}
    if args.rvh_mode:
        overrides["rvh"] = {"mode": args.rvh_mode}
    if args.resolution is not None:
        overrides["resolution"] = args.resolution
    try:
        backends = Backends.parse(args.backend_dispatch, args.backend_exec, args.backend_vlm,
                                  args.timeout)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return EpisodeConfig(), overrides, backends


def _scenario(path, args) -> Scenario:
    sc = Scenario.load(path)
    if args.map:
        sc.map_path = Path(args.map)
    if args.seed_override is not None:
        sc.seed = args.seed_override
    return sc


def _run_one(job):
    """Run one scenario file; used directly and from worker processes."""
    path, args_dict = job
    args = argparse.Namespace(**args_dict)
    cfg, overrides, backends = _config(args)
    sc = _scenario(path, args)
    elog = run_episode(sc, cfg, backends, overrides)
    return sc.name, elog.to_json()


def cmd_run(args) -> int:
    from haltnav.report import plot_episode, render_ppm

    try:
        name, text = _run_one((args.scenario, vars(args)))
    except ScenarioInvalid as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out) if args.out else Path(f"{name}.log.json")
    write_atomic(out, text)
    elog = EpisodeLog.from_json(text)
    if args.figure or args.render:
        sc = _scenario(args.scenario, args)
        bundle = load_bundle(sc.map_path, elog.config["resolution"])
        if args.figure:
            plot_episode(bundle.graph, elog, args.figure)
        if args.render:
            write_atomic(args.render, render_ppm(bundle.graph, elog, grids=bundle.level_grids))
    t = elog.terminal
    status = "SUCCESS" if t["success"] else f"FAILURE ({t['failure_reason']})"
    print(f"{name}: {status} steps={t['steps']} macros={t['macros']} halts={len(elog.halts)} "
          f"replans={len(elog.replans)} path={elog.path_length:.2f}m NE={t['final_distance']:.2f}m")
    print(f"log written to {out}")
    return EXIT_OK


def _scenario_files(spec: list[str]) -> list[Path]:
    files = []
    for s in spec:
        p = Path(s)
        if p.is_dir():
            files += sorted(list(p.glob("*.yaml")) + list(p.glob("*.yml")))
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"scenario path {s} does not exist")
    if not files:
        raise UsageError("no scenario files found")
    return files


def cmd_batch(args) -> int:
    from haltnav.report import plot_metrics

    files = _scenario_files(args.scenario)
    for f in files:  # fail fast on unreadable inputs before any episode runs
        try:
            _scenario(f, args)
        except ScenarioInvalid as exc:
            raise UsageError(str(exc)) from exc
    out = Path(args.out or "haltnav-batch")
    jobs = [(str(f), vars(args)) for f in files]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    logs, shortest = [], []
    for name, text in results:
        write_atomic(out / "logs" / f"{name}.json", text)
        elog = EpisodeLog.from_json(text)
        if elog.shortest_path is None or elog.shortest_path <= 0:
            log.warning("%s: no reference path; excluded from metrics", name)
            continue
        logs.append(elog)
        shortest.append(elog.shortest_path)
    if not logs:
        print("no episodes with a valid reference path")
        return EXIT_OK
    report = compute_metrics(logs, shortest)
    write_atomic(out / "metrics.json", report.to_json())
    write_atomic(out / "metrics.csv", report.to_csv())
    plot_metrics(report, out / "metrics.png")
    print(f"episodes={len(report.rows)} SR={report.sr:.2f}% SPL={report.spl:.4f} "
          f"OS={report.os:.2f}% NE={report.ne:.3f}m")
    print(f"metrics written to {out}")
    return EXIT_OK


def cmd_render(args) -> int:
    from haltnav.report import render_ppm

    graph = _load_map(args.map)
    text = Path(args.log).read_text() if args.log else ""
    elog = None
    if text.strip():
        try:
            elog = EpisodeLog.from_json(text)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"{args.log}: {exc}") from exc
    res = args.resolution or (elog.config["resolution"] if elog else raster.DEFAULT_RESOLUTION)
    write_atomic(args.out, render_ppm(graph, elog, res, scale=args.scale))
    print(f"image written to {args.out}")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    from haltnav.fixtures import FixtureSpec, InvalidSpec, default_suite_specs, generate_fixture

    specs = default_suite_specs(args.seed)
    if args.layout:
        specs = [FixtureSpec(lay, seed=args.seed) for lay in args.layout]
    out = Path(args.out)
    count = 0
    for spec in specs:
        try:
            xml, scenarios = generate_fixture(spec, f"{spec.layout}.osm")
        except InvalidSpec as exc:
            raise UsageError(str(exc)) from exc
        write_atomic(out / f"{spec.layout}.osm", xml)
        for d in scenarios:
            write_atomic(out / f"{d['name']}.yaml", yaml.safe_dump(d, sort_keys=True))
            count += 1
    print(f"{len(specs)} maps, {count} scenarios written to {out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="haltnav", description="Hierarchical indoor navigation on area graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a map for structural violations")
    v.add_argument("--map", required=True)
    v.set_defaults(func=cmd_validate)

    pl = sub.add_parser("plan", help="print the passage route between two points")
    pl.add_argument("--map", required=True)
    pl.add_argument("--start", required=True, type=_point, help="x,y[,level]")
    pl.add_argument("--goal", required=True, type=_point, help="x,y[,level]")
    pl.add_argument("--block", action="append", default=[], metavar="PASSAGE")
    pl.add_argument("--block-area", action="append", default=[], metavar="AREA")
    pl.add_argument("--resolution", type=float, default=raster.DEFAULT_RESOLUTION)
    pl.add_argument("--export-costs", metavar="FILE")
    pl.add_argument("-v", "--verbose", action="store_true")
    pl.set_defaults(func=cmd_plan)

    def episode_flags(sp):
        sp.add_argument("--map", help="override the scenario's map path")
        sp.add_argument("--out")
        sp.add_argument("--backend-dispatch", default="oracle", metavar="oracle|external:ENDPOINT")
        sp.add_argument("--backend-exec", default="oracle", metavar="oracle|external:ENDPOINT")
        sp.add_argument("--backend-vlm", default="oracle", metavar="oracle|external:ENDPOINT")
        sp.add_argument("--rvh-mode", choices=("off", "bottom_up_only", "full"))
        sp.add_argument("--seed-override", type=int)
        sp.add_argument("--resolution", type=float)
        sp.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT,
                        help="seconds to wait for an external backend reply")

    r = sub.add_parser("run", help="run one scenario and write its log")
    r.add_argument("--scenario", required=True)
    episode_flags(r)
    r.add_argument("--figure", help="also save a matplotlib trajectory figure (PNG)")
    r.add_argument("--render", help="also save a PPM render")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("batch", help="run many scenarios; write logs and metrics")
    b.add_argument("--scenario", required=True, nargs="+", help="scenario files or directories")
    episode_flags(b)
    b.add_argument("--jobs", type=int, default=1)
    b.set_defaults(func=cmd_batch)

    rd = sub.add_parser("render", help="draw a map (and optionally an episode) as PPM")
    rd.add_argument("--map", required=True)
    rd.add_argument("--log")
    rd.add_argument("--out", required=True)
    rd.add_argument("--resolution", type=float)
    rd.add_argument("--scale", type=int, default=1)
    rd.set_defaults(func=cmd_render)

    fx = sub.add_parser("fixtures", help="write the fixture maps and scenario suites")
    fx.add_argument("--out", required=True)
    fx.add_argument("--seed", type=int, default=0)
    fx.add_argument("--layout", action="append", choices=("two_room", "t_corridor", "ring4",
                                                            "grid", "multi_floor"))
    fx.set_defaults(func=cmd_fixtures)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("HALTNAV_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError, ScenarioInvalid) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

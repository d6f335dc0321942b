"""Command line entry point: ``visnav <subcommand> ...``.

Exit codes: 0 success, 2 bad input or a terminal inside an obstacle,
3 no path between the terminals.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path as FsPath

from visnav import io
from visnav.bench import SCALING_SIZES, run_bench
from visnav.config import NavConfig
from visnav.extraction import build_polyhedral_map
from visnav.oracle import astar_26, voxelize
from visnav.path_search import TerminalInCollisionError, UnreachableError, plan
from visnav.sim import LAYOUTS, make_scene, navigate, scene_map
from visnav.vgraph import build_local_graph

log = logging.getLogger("visnav")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_PATH = 3


class InputError(Exception):
    pass


def _set_threads() -> None:
    raw = os.environ.get("VISNAV_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"VISNAV_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise InputError("VISNAV_THREADS must be >= 0")
    if n > 0:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _config(args) -> NavConfig:
    cfg = NavConfig.load(args.config) if args.config else NavConfig()
    changes = {}
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    if getattr(args, "iters", None) is not None:
        changes["max_refine_iterations"] = args.iters
    if getattr(args, "budget_ms", None) is not None:
        # an explicit budget means wall-clock limits are wanted
        changes["time_budget"] = args.budget_ms
        changes["deterministic"] = False
    return cfg.replace(**changes) if changes else cfg


def _emit(args, text: str) -> None:
    if args.out:
        FsPath(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_scene(path):
    return io.scene_from_dict(io.read_json(path))


# ---------------------------------------------------------------- commands

def cmd_extract(args) -> int:
    cfg = _config(args)
    cloud = io.read_cloud(args.cloud, args.cloud_format)
    pmap = build_polyhedral_map(cloud, cfg)
    if args.format == "csv":
        rows = [{"id": v.id, "x": v.position[0], "y": v.position[1], "z": v.position[2], "layer": v.layer,
                 "polygon_id": v.polygon_id, "top": pmap.top_layer_marks[v.id]} for v in pmap.vertices]
        _emit(args, io.csv_text(rows, ["id", "x", "y", "z", "layer", "polygon_id", "top"]))
    else:
        _emit(args, io.json_text(io.map_to_dict(pmap)))
    log.info("extracted %d vertices in %d polygons", len(pmap.vertices), pmap.base.n_polygons)
    return EXIT_OK


def _map_for_graph(args, cfg):
    sources = [s for s in (args.map, args.cloud, args.scene) if s]
    if len(sources) != 1:
        raise InputError("give exactly one of --map, --cloud, --scene")
    if args.map:
        return io.map_from_dict(io.read_json(args.map))
    if args.cloud:
        return build_polyhedral_map(io.read_cloud(args.cloud, args.cloud_format), cfg)
    scene = _load_scene(args.scene)
    return scene_map(scene, scene.nav_config(cfg))


def cmd_build_graph(args) -> int:
    cfg = _config(args)
    pmap = _map_for_graph(args, cfg)
    graph, stats = build_local_graph(pmap, cfg)
    log.info("graph: n=%d edges=%d lambda=%.2f build %.1f ms", stats.n, graph.n_edges, stats.lambda_,
             stats.build_time)
    if args.format == "csv":
        rows = [{"a": a, "b": b, "kind": k, "weight": graph.weight(a, b)} for a, b, k in graph.edges()]
        _emit(args, io.csv_text(rows, ["a", "b", "kind", "weight"]))
    else:
        _emit(args, io.json_text(io.graph_to_dict(graph, stats, pmap)))
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _config(args)
    graph, pmap = io.graph_from_dict(io.read_json(args.graph))
    if pmap is None:
        raise InputError("graph file carries no map; rebuild it with build-graph")
    path, state = plan(graph, pmap, io.parse_point(args.start), io.parse_point(args.goal), cfg)
    if args.format == "csv":
        _emit(args, io.csv_text(io.path_rows(path), ["index", "x", "y", "z"]))
    else:
        _emit(args, io.json_text(io.path_to_dict(path, state, include_timing=not args.no_timing)))
    log.info("path length %.3f m after %d iterations", path.length, state.iteration)
    return EXIT_OK


def cmd_navigate(args) -> int:
    cfg = _config(args)
    scene = _load_scene(args.scene)
    cfg = scene.nav_config(cfg)
    out_dir = FsPath(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    on_cycle = None
    if args.dump_graphs:
        gdir = out_dir / "graphs"
        gdir.mkdir(exist_ok=True)

        def on_cycle(cycle, glob):
            io.write_json(gdir / f"frame_{cycle:04d}.json", io.global_graph_to_dict(glob))

    nav = navigate(scene, io.parse_point(args.start), io.parse_point(args.goal), cfg, speed=args.speed,
                   max_cycles=args.max_cycles, sensor_range=args.sensor_range, rays=args.rays, on_cycle=on_cycle)
    io.write_csv(out_dir / "navlog.csv", io.navlog_rows(nav), io.NAVLOG_COLUMNS)
    io.write_json(out_dir / "navlog.json", io.navlog_to_dict(nav, include_timing=not args.no_timing))
    print(io.json_text(nav.summary()), end="")
    if nav.verdict == "unreachable":
        return EXIT_NO_PATH
    if nav.verdict in ("goal-in-collision", "start-in-collision"):
        return EXIT_INPUT
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _config(args)
    scene = _load_scene(args.scene)
    cfg = scene.nav_config(cfg)
    pmap = scene_map(scene, cfg)
    start, goal = io.parse_point(args.start), io.parse_point(args.goal)
    for p in (start, goal):
        if pmap.compiled.point_blocked(p):
            raise TerminalInCollisionError(f"terminal {p} lies inside an obstacle")
    path = astar_26(voxelize(pmap, scene.bounds, args.resolution), start, goal)
    if path is None:
        raise UnreachableError("the voxel search found no path")
    if args.format == "json":
        doc = {"schema_version": io.SCHEMA_VERSION, "kind": "oracle_path", "length": path.length,
               "waypoints": [list(p) for p in path.waypoints]}
        _emit(args, io.json_text(doc))
    else:
        _emit(args, io.csv_text(io.path_rows(path), ["index", "x", "y", "z"]))
    print(f"length {path.length:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    sizes = [] if args.no_scaling else [int(s) for s in args.sizes.split(",") if s]
    doc = run_bench(args.out_dir, n_scenes=args.scenes, seed=cfg.rng_seed, count=args.count, sizes=sizes,
                    include_wall=not args.no_wall, config=cfg)
    print(io.json_text(doc["summary"]), end="")
    for msg in doc["failures"]:
        print(f"oracle failure: {msg}", file=sys.stderr)
    return 1 if doc["failures"] else EXIT_OK


def cmd_make_scene(args) -> int:
    scene = make_scene(args.layout, args.seed or 0, args.count)
    _emit(args, io.json_text(io.scene_to_dict(scene)))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON file with NavConfig fields")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="visnav", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    def out_flags(sp, formats=("json", "csv")):
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--format", choices=formats, default=formats[0])

    sp = add("extract", cmd_extract, "point cloud -> polyhedral map")
    sp.add_argument("--cloud", required=True)
    sp.add_argument("--cloud-format", choices=["auto", "xyz", "bin"], default="auto")
    out_flags(sp)

    sp = add("build-graph", cmd_build_graph, "map, cloud or scene -> visibility graph")
    sp.add_argument("--map")
    sp.add_argument("--cloud")
    sp.add_argument("--cloud-format", choices=["auto", "xyz", "bin"], default="auto")
    sp.add_argument("--scene")
    out_flags(sp)

    sp = add("plan", cmd_plan, "shortest path on a graph file")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--start", required=True, help="x,y,z")
    sp.add_argument("--goal", required=True, help="x,y,z")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--budget-ms", type=float)
    sp.add_argument("--no-timing", action="store_true", help="leave wall-clock timings out of the output")
    out_flags(sp)

    sp = add("navigate", cmd_navigate, "closed-loop navigation in a scene")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--start", required=True)
    sp.add_argument("--goal", required=True)
    sp.add_argument("--out-dir", default="navlog")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--budget-ms", type=float)
    sp.add_argument("--speed", type=float, default=2.0)
    sp.add_argument("--max-cycles", type=int, default=600)
    sp.add_argument("--sensor-range", type=float, default=30.0)
    sp.add_argument("--rays", type=int, default=16000)
    sp.add_argument("--dump-graphs", action="store_true", help="write the global graph after every cycle")
    sp.add_argument("--no-timing", action="store_true")

    sp = add("oracle", cmd_oracle, "voxel A* reference path")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--start", required=True)
    sp.add_argument("--goal", required=True)
    sp.add_argument("--resolution", type=float)
    out_flags(sp, ("csv", "json"))

    sp = add("bench", cmd_bench, "quality and scaling benchmarks")
    sp.add_argument("--out-dir", default="bench")
    sp.add_argument("--scenes", type=int, default=20)
    sp.add_argument("--count", type=int, default=15, help="obstacles per random scene")
    sp.add_argument("--sizes", default=",".join(str(s) for s in SCALING_SIZES))
    sp.add_argument("--no-scaling", action="store_true")
    sp.add_argument("--no-wall", action="store_true")

    sp = add("make-scene", cmd_make_scene, "write a named layout as a scene file")
    sp.add_argument("--layout", choices=sorted(LAYOUTS), required=True)
    sp.add_argument("--count", type=int, default=10)
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _set_threads()
        return args.func(args)
    except UnreachableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_PATH
    except (TerminalInCollisionError, InputError, io.SchemaError, ValueError, KeyError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Benchmarks: path quality against voxel A*, the wall fly-over case, and the
build-time scaling sweep. Reports are CSV + JSON with PNG figures."""
from __future__ import annotations

import logging
import math
import time
from pathlib import Path as FsPath
from typing import Optional, Sequence

import numpy as np

from visnav.config import NavConfig
from visnav.extraction import LayeredPolygonMap, PolyhedralMap, connect_vertical_contours
from visnav.geometry import Polygon2D
from visnav.oracle import astar_26, polyline_collisions, voxelize
from visnav.path_search import TerminalInCollisionError, UnreachableError, plan
from visnav.sim import WALL_GOAL, WALL_START, Scene, random_scene, scene_map, wall_scene
from visnav.vgraph import build_local_graph

log = logging.getLogger(__name__)

SCALING_SIZES = (100, 200, 400, 800, 1600, 3200)
QUALITY_FACTOR = 1.10
MONOTONE_TOL = 1e-9


def _quality(oracle_len: float, achieved: float) -> float:
    return 100.0 * oracle_len / achieved if achieved > 0 else 100.0


def random_terminals(scene: Scene, pmap: PolyhedralMap, vgrid, rng: np.random.Generator,
                     min_separation: float, z_max: float = 3.0, tries: int = 10000):
    """Two free points (planner map and voxel grid) at least ``min_separation`` apart in xy."""
    (x0, y0, z0), (x1, y1, z1) = scene.bounds

    def one():
        for _ in range(tries):
            p = (rng.uniform(x0 + 1, x1 - 1), rng.uniform(y0 + 1, y1 - 1),
                 rng.uniform(z0 + 0.5, min(z1 - 0.5, z_max)))
            if pmap.compiled.point_blocked(p):
                continue
            if vgrid.occupancy[vgrid.index_of(p)]:
                continue
            return p
        raise RuntimeError("no free terminal found")

    for _ in range(tries):
        a, b = one(), one()
        if math.dist(a[:2], b[:2]) >= min_separation:
            return a, b
    raise RuntimeError("no terminal pair with the requested separation")


def quality_case(scene: Scene, start, goal, config: NavConfig, pmap: Optional[PolyhedralMap] = None,
                 vgrid=None) -> dict:
    """Plan on the fully known scene and compare with voxel A*."""
    t0 = time.perf_counter()
    pmap = pmap or scene_map(scene, config)
    graph, stats = build_local_graph(pmap, config)
    build_ms = (time.perf_counter() - t0) * 1e3
    vgrid = vgrid or voxelize(pmap, scene.bounds)
    oracle = astar_26(vgrid, start, goal)
    row = {"scene": scene.name, "n": stats.n, "build_ms": build_ms,
           "start": list(start), "goal": list(goal),
           "oracle_length": oracle.length if oracle else math.nan, "solvable": oracle is not None}
    try:
        path, state = plan(graph, pmap, start, goal, config)
    except (UnreachableError, TerminalInCollisionError) as exc:
        row.update(planned=False, error=type(exc).__name__, initial_length=math.nan, refined_length=math.nan,
                   initial_quality_pct=0.0, refined_quality_pct=0.0, monotone=True, collision_free=True,
                   history=[], initial_search_ms=math.nan, refined_search_ms=math.nan, within_factor=False)
        return row
    hist = state.history
    monotone = all(b <= a + MONOTONE_TOL for a, b in zip(hist, hist[1:]))
    row.update(
        planned=True,
        initial_length=hist[0],
        refined_length=path.length,
        history=list(hist),
        iterations=state.iteration,
        initial_search_ms=state.timing["attach_ms"] + state.timing["search_ms"],
        refined_search_ms=state.timing["total_ms"],
        monotone=monotone,
        collision_free=not polyline_collisions(path.waypoints, pmap),
        waypoints=[list(p) for p in path.waypoints],
    )
    if oracle is not None:
        row["initial_quality_pct"] = _quality(oracle.length, hist[0])
        row["refined_quality_pct"] = _quality(oracle.length, path.length)
        row["within_factor"] = path.length <= QUALITY_FACTOR * oracle.length
    return row


def quality_suite(n_scenes: int = 20, seed: int = 0, count: int = 15,
                  size: tuple[float, float, float] = (40.0, 40.0, 8.0),
                  config: Optional[NavConfig] = None) -> list[dict]:
    rows = []
    for k in range(n_scenes):
        scene = random_scene(seed + k, count, size)
        cfg = scene.nav_config(config)
        pmap = scene_map(scene, cfg)
        vgrid = voxelize(pmap, scene.bounds)
        rng = np.random.default_rng([seed, k])
        start, goal = random_terminals(scene, pmap, vgrid, rng, min_separation=0.5 * min(size[:2]))
        row = quality_case(scene, start, goal, cfg, pmap, vgrid)
        row["seed"] = seed + k
        rows.append(row)
        log.info("%s n=%d quality %.1f%% -> %.1f%%", scene.name, row["n"],
                 row.get("initial_quality_pct", 0), row.get("refined_quality_pct", 0))
    return rows


def wall_case(config: Optional[NavConfig] = None) -> dict:
    scene = wall_scene()
    row = quality_case(scene, WALL_START, WALL_GOAL, scene.nav_config(config))
    row["seed"] = 0
    return row


# ---------------------------------------------------------------- scaling

def box_field_map(n_target: int, config: NavConfig, seed: int = 0) -> PolyhedralMap:
    """Square pillars on a jittered lattice at constant density, heights of
    2-6 slabs, sized so the map holds about ``n_target`` vertices."""
    rng = np.random.default_rng(seed)
    slabs = config.slabs()
    mean_layers = 4.0
    n_boxes = max(1, int(round(n_target / (4 * mean_layers))))
    cols = int(math.ceil(math.sqrt(n_boxes)))
    pitch = 4.0
    polys: list[list[Polygon2D]] = [[] for _ in slabs]
    cells = rng.permutation(cols * cols)[:n_boxes]
    for c in np.sort(cells):
        cx = (c % cols + 0.5) * pitch + rng.uniform(-0.5, 0.5)
        cy = (c // cols + 0.5) * pitch + rng.uniform(-0.5, 0.5)
        hw, hd = rng.uniform(0.5, 1.2, size=2)
        sq = Polygon2D([(cx - hw, cy - hd), (cx + hw, cy - hd), (cx + hw, cy + hd), (cx - hw, cy + hd)])
        for layer in range(min(int(rng.integers(2, 7)), len(slabs))):
            polys[layer].append(sq)
    layered = LayeredPolygonMap(slabs, polys, config.resolution, config.inflation_radius)
    return connect_vertical_contours(layered, config.knn_k, config.knn_search_radius)


def fit_exponent(ns: Sequence[float], times: Sequence[float]) -> float:
    slope, _ = np.polyfit(np.log(ns), np.log(times), 1)
    return float(slope)


def scaling_sweep(sizes: Sequence[int] = SCALING_SIZES, seed: int = 0, repeats: int = 3,
                  config: Optional[NavConfig] = None) -> tuple[list[dict], float]:
    """Best-of-``repeats`` build time per size, and the log-log slope."""
    config = (config or NavConfig()).replace(z_ceiling=4.0)
    rows = []
    # compile the kernels outside the timed region
    build_local_graph(box_field_map(50, config, seed), config)
    for n in sizes:
        pmap = box_field_map(n, config, seed)
        pmap.compiled
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            graph, stats = build_local_graph(pmap, config)
            times.append((time.perf_counter() - t0) * 1e3)
        rows.append({"n_target": n, "n": stats.n, "edges": graph.n_edges, "build_ms": min(times),
                     "lambda": stats.lambda_, "k": stats.k})
        log.info("scaling n=%d build %.1f ms", stats.n, min(times))
    exponent = fit_exponent([r["n"] for r in rows], [r["build_ms"] for r in rows]) if len(rows) >= 2 else math.nan
    return rows, exponent


# ---------------------------------------------------------------- report

QUALITY_COLUMNS = ["scene", "seed", "n", "build_ms", "initial_search_ms", "refined_search_ms",
                   "initial_length", "refined_length", "oracle_length", "initial_quality_pct",
                   "refined_quality_pct", "solvable", "planned", "monotone", "collision_free", "within_factor"]
SCALING_COLUMNS = ["n_target", "n", "edges", "build_ms", "lambda", "k"]


def failures(quality_rows: list[dict]) -> list[str]:
    """Oracle-check failures: colliding paths or non-monotone refinement."""
    out = []
    for r in quality_rows:
        if r.get("planned") and not r["collision_free"]:
            out.append(f"{r['scene']}: path fails the collision oracle")
        if r.get("planned") and not r["monotone"]:
            out.append(f"{r['scene']}: refinement increased the path length")
    return out


def summarize(quality_rows: list[dict], scaling_rows: list[dict], exponent: float) -> dict:
    solvable = [r for r in quality_rows if r["solvable"] and r["scene"] != "wall"]
    within = [r for r in solvable if r.get("within_factor")]
    return {
        "scenes": len(quality_rows),
        "solvable": len(solvable),
        "within_factor": len(within),
        "within_factor_fraction": len(within) / len(solvable) if solvable else math.nan,
        "quality_factor": QUALITY_FACTOR,
        "scaling_exponent": exponent,
        "scaling_points": len(scaling_rows),
    }


def render_figures(out_dir: FsPath, quality_rows: list[dict], scaling_rows: list[dict],
                   exponent: float) -> list[FsPath]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    planned = [r for r in quality_rows if r.get("planned") and r["solvable"]]
    if planned:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        x = np.arange(len(planned))
        ax.bar(x - 0.2, [r["initial_quality_pct"] for r in planned], 0.4, label="initial")
        ax.bar(x + 0.2, [r["refined_quality_pct"] for r in planned], 0.4, label="refined")
        ax.axhline(100.0 / QUALITY_FACTOR, color="k", lw=0.8, ls="--")
        ax.set_xticks(x)
        ax.set_xticklabels([r["scene"] for r in planned], rotation=60, fontsize=7)
        ax.set_ylabel("A* length / path length (%)")
        ax.legend(fontsize=8)
        fig.tight_layout()
        p = out_dir / "quality.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    if len(scaling_rows) >= 2:
        ns = np.array([r["n"] for r in scaling_rows], dtype=float)
        ts = np.array([r["build_ms"] for r in scaling_rows])
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        ax.loglog(ns, ts, "o-", label="measured")
        c = np.exp(np.mean(np.log(ts) - exponent * np.log(ns)))
        ax.loglog(ns, c * ns ** exponent, "--", label=f"fit, slope {exponent:.2f}")
        ax.set_xlabel("vertices n")
        ax.set_ylabel("build time (ms)")
        ax.legend(fontsize=8)
        fig.tight_layout()
        p = out_dir / "scaling.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths


def write_report(out_dir, quality_rows: list[dict], scaling_rows: list[dict], exponent: float) -> dict:
    from visnav.io import SCHEMA_VERSION, write_csv, write_json

    out_dir = FsPath(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "quality.csv", quality_rows, QUALITY_COLUMNS)
    write_csv(out_dir / "scaling.csv", scaling_rows, SCALING_COLUMNS)
    figures = render_figures(out_dir, quality_rows, scaling_rows, exponent)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "bench_report",
        "summary": summarize(quality_rows, scaling_rows, exponent),
        "quality": [{k: v for k, v in r.items() if k != "waypoints"} for r in quality_rows],
        "scaling": scaling_rows,
        "failures": failures(quality_rows),
        "figures": [p.name for p in figures],
    }
    write_json(out_dir / "report.json", doc)
    return doc


def run_bench(out_dir, n_scenes: int = 20, seed: int = 0, count: int = 15,
              sizes: Sequence[int] = SCALING_SIZES, include_wall: bool = True,
              config: Optional[NavConfig] = None) -> dict:
    rows = []
    if include_wall:
        rows.append(wall_case(config))
    rows.extend(quality_suite(n_scenes, seed, count, config=config))
    scaling_rows, exponent = scaling_sweep(sizes, seed, config=config) if sizes else ([], math.nan)
    return write_report(out_dir, rows, scaling_rows, exponent)

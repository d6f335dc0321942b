"""File formats: JSON documents for maps, graphs, scenes and paths, CSV for
per-row logs, XYZ / raw float64 point clouds.

Every JSON document carries ``schema_version`` and is written with sorted
keys so identical inputs produce identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path as FsPath
from typing import Iterable, Optional

import numpy as np

from visnav.extraction import (EXTRACTED, SAMPLED, GraphVertex, LayeredPolygonMap,
                               PolyhedralMap)
from visnav.geometry import LayerSlab, Polygon2D
from visnav.global_graph import GlobalGraph
from visnav.path_search import Path, RefineState
from visnav.sim import NavLog, Obstacle, Scene
from visnav.vgraph import GraphStats, VisibilityGraph

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


def _check(doc: dict, kind: str) -> dict:
    if not isinstance(doc, dict):
        raise SchemaError("document must be a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {doc.get('schema_version')!r}")
    if doc.get("kind") != kind:
        raise SchemaError(f"expected a {kind!r} document, got {doc.get('kind')!r}")
    return doc


def _finite(obj):
    """NaN and infinities become null so the output stays strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def json_text(doc: dict) -> str:
    return json.dumps(_finite(doc), sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path, doc: dict) -> None:
    FsPath(path).write_text(json_text(doc))


def read_json(path) -> dict:
    return json.loads(FsPath(path).read_text())


def csv_text(rows: list[dict], columns: Optional[list[str]] = None) -> str:
    """CSV with a leading ``schema_version`` column."""
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["schema_version"] + list(columns), extrasaction="ignore",
                       lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({"schema_version": SCHEMA_VERSION, **r})
    return buf.getvalue()


def write_csv(path, rows: list[dict], columns: Optional[list[str]] = None) -> None:
    FsPath(path).write_text(csv_text(rows, columns))


# ---------------------------------------------------------------- clouds

def read_cloud(path, fmt: str = "auto") -> np.ndarray:
    """(N, 3) float array from ASCII "x y z" lines or little-endian float64 triples."""
    path = FsPath(path)
    if fmt == "auto":
        fmt = "bin" if path.suffix.lower() in (".bin", ".f64", ".raw") else "xyz"
    if fmt == "xyz":
        rows = []
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: expected 'x y z'")
            rows.append([float(p) for p in parts[:3]])
        return np.array(rows, dtype=float).reshape(-1, 3)
    if fmt == "bin":
        raw = np.fromfile(path, dtype="<f8")
        if raw.size % 3:
            raise ValueError(f"{path}: size is not a multiple of 3 float64 values")
        return raw.reshape(-1, 3).astype(float)
    raise ValueError(f"unknown cloud format {fmt!r}")


def write_cloud(path, points, fmt: str = "xyz") -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if fmt == "bin":
        pts.astype("<f8").tofile(path)
    else:
        FsPath(path).write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()))


# ---------------------------------------------------------------- vertices

def _vertex_to_dict(v: GraphVertex) -> dict:
    return {"id": v.id, "position": list(v.position), "layer": v.layer,
            "polygon_id": SAMPLED if v.polygon_id is None else v.polygon_id, "origin": v.origin}


def _vertex_from_dict(d: dict) -> GraphVertex:
    pid = d.get("polygon_id")
    return GraphVertex(int(d["id"]), tuple(float(c) for c in d["position"]), int(d["layer"]),
                       None if pid in (None, SAMPLED) else int(pid), d.get("origin", EXTRACTED))


# ---------------------------------------------------------------- maps

def map_to_dict(pmap: PolyhedralMap) -> dict:
    base = pmap.base
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "polyhedral_map",
        "resolution": base.resolution,
        "inflation_radius": base.inflation_radius,
        "slabs": [[s.z_min, s.z_max] for s in base.slabs],
        "polygons": [[p.vertices.tolist() for p in polys] for polys in base.polygons_per_layer],
        "vertices": [_vertex_to_dict(v) for v in pmap.vertices],
        "vertical_edges": [list(e) for e in pmap.vertical_edges],
        "top_marked": sorted(k for k, top in pmap.top_layer_marks.items() if top),
    }


def map_from_dict(doc: dict) -> PolyhedralMap:
    _check(doc, "polyhedral_map")
    slabs = [LayerSlab(i, float(a), float(b)) for i, (a, b) in enumerate(doc["slabs"])]
    polys = [[Polygon2D(p, validate=False) for p in layer] for layer in doc["polygons"]]
    base = LayeredPolygonMap(slabs, polys, float(doc["resolution"]), float(doc["inflation_radius"]))
    vertices = [_vertex_from_dict(v) for v in doc["vertices"]]
    top = set(doc.get("top_marked", []))
    return PolyhedralMap(base, vertices, [tuple(e) for e in doc["vertical_edges"]],
                         {v.id: v.id in top for v in vertices})


# ---------------------------------------------------------------- graphs

def graph_to_dict(graph: VisibilityGraph, stats: Optional[GraphStats] = None,
                  pmap: Optional[PolyhedralMap] = None, include_timing: bool = False) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "visibility_graph",
        "vertices": [_vertex_to_dict(v) for v in graph.vertices],
        "edges": [{"a": a, "b": b, "kind": k, "weight": graph.weight(a, b)} for a, b, k in graph.edges()],
    }
    if stats is not None:
        sd = stats.to_dict()
        if not include_timing:
            sd.pop("build_time_ms")
        doc["stats"] = sd
    if pmap is not None:
        doc["map"] = map_to_dict(pmap)
    return doc


def graph_from_dict(doc: dict) -> tuple[VisibilityGraph, Optional[PolyhedralMap]]:
    _check(doc, "visibility_graph")
    graph = VisibilityGraph(_vertex_from_dict(v) for v in doc["vertices"])
    for e in doc["edges"]:
        graph.add_edge(int(e["a"]), int(e["b"]), e["kind"])
    pmap = map_from_dict(doc["map"]) if "map" in doc else None
    return graph, pmap


def global_graph_to_dict(glob: GlobalGraph, pmap: Optional[PolyhedralMap] = None) -> dict:
    doc = graph_to_dict(glob.graph, pmap=pmap)
    doc["absence_counters"] = {str(k): v for k, v in sorted(glob.absence_counters.items())}
    doc["frame_index"] = glob.frame_index
    doc["correspondence_tolerance"] = glob.correspondence_tolerance
    doc["disappear_frames"] = glob.disappear_frames
    return doc


# ---------------------------------------------------------------- scenes

def scene_to_dict(scene: Scene) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "scene",
        "name": scene.name,
        "bounds": [list(scene.bounds[0]), list(scene.bounds[1])],
        "obstacles": [{"footprint": ob.footprint.vertices.tolist(), "z_min": ob.z_min, "z_max": ob.z_max}
                      for ob in scene.obstacles],
    }


def scene_from_dict(doc: dict) -> Scene:
    # hand-written scene files may omit the header fields
    doc = dict(doc)
    doc.setdefault("schema_version", SCHEMA_VERSION)
    doc.setdefault("kind", "scene")
    _check(doc, "scene")
    obstacles = [Obstacle(Polygon2D(o["footprint"]), float(o["z_min"]), float(o["z_max"]))
                 for o in doc["obstacles"]]
    lo, hi = doc["bounds"]
    return Scene((tuple(lo), tuple(hi)), obstacles, doc.get("name", "custom"))


# ---------------------------------------------------------------- paths and logs

def path_to_dict(path: Path, state: Optional[RefineState] = None, include_timing: bool = True) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "path",
        "waypoints": [list(p) for p in path.waypoints],
        "length": path.length,
    }
    if state is not None:
        doc["iterations"] = state.iteration
        doc["converged"] = state.converged
        doc["division_depth"] = state.division_depth
        doc["length_history"] = list(state.history)
        doc["inserted"] = [list(v.position) for v in state.inserted]
        if include_timing:
            doc["timing_ms"] = {k: v for k, v in state.timing.items()}
    return doc


def path_rows(path: Path) -> list[dict]:
    return [{"index": i, "x": p.x, "y": p.y, "z": p.z} for i, p in enumerate(path.waypoints)]


NAVLOG_COLUMNS = ["cycle", "graph_update_ms", "path_search_ms", "path_length",
                  "x", "y", "z", "n_vertices", "executed_clear", "nudged"]


def navlog_rows(log: NavLog) -> list[dict]:
    rows = []
    for r in log.records:
        row = dict(r)
        row["x"], row["y"], row["z"] = r["robot_pose"]
        rows.append(row)
    return rows


def navlog_to_dict(log: NavLog, include_timing: bool = True) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "kind": "navlog", **log.summary(),
           "trace": [list(p) for p in log.trace]}
    if include_timing and log.records:
        upd = [r["graph_update_ms"] for r in log.records]
        srch = [r["path_search_ms"] for r in log.records]
        doc["mean_graph_update_ms"] = float(np.mean(upd))
        doc["mean_path_search_ms"] = float(np.mean(srch))
    return doc


def write_navlog(out_dir, log: NavLog) -> tuple[FsPath, FsPath]:
    out_dir = FsPath(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "navlog.csv"
    json_path = out_dir / "navlog.json"
    write_csv(csv_path, navlog_rows(log), NAVLOG_COLUMNS)
    write_json(json_path, navlog_to_dict(log))
    return csv_path, json_path


def parse_point(text: str) -> tuple[float, float, float]:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != 3:
        raise ValueError(f"expected x,y,z, got {text!r}")
    return tuple(float(p) for p in parts)


def iter_rows(path) -> Iterable[dict]:
    with open(path, newline="") as fh:
        yield from csv.DictReader(fh)

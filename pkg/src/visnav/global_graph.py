"""Persistent global graph fed by per-frame local graphs.

Local vertices are matched to global ones by mutual nearest neighbour
within a tolerance. Matched vertices take the new position, unmatched ones
are inserted, and global vertices inside the observed extent that find no
partner accumulate misses until they are dropped.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from visnav.config import NavConfig
from visnav.extraction import GraphVertex, PolyhedralMap
from visnav.geometry import compiled_layers
from visnav.vgraph import VisibilityGraph

log = logging.getLogger(__name__)


@dataclass
class GlobalGraph:
    graph: VisibilityGraph = field(default_factory=VisibilityGraph)
    absence_counters: dict[int, int] = field(default_factory=dict)
    frame_index: int = 0
    correspondence_tolerance: float = 0.3
    disappear_frames: int = 5
    next_id: int = 0
    map_fingerprint: Optional[str] = None

    @classmethod
    def from_config(cls, config: NavConfig) -> "GlobalGraph":
        return cls(correspondence_tolerance=config.match_tolerance,
                   disappear_frames=config.disappear_frames)

    def copy(self) -> "GlobalGraph":
        return GlobalGraph(self.graph.copy(), dict(self.absence_counters), self.frame_index,
                           self.correspondence_tolerance, self.disappear_frames, self.next_id,
                           self.map_fingerprint)


def _in_extent(positions: np.ndarray, robot_pose, extent: float) -> np.ndarray:
    half = 0.5 * extent
    return ((np.abs(positions[:, 0] - robot_pose[0]) <= half)
            & (np.abs(positions[:, 1] - robot_pose[1]) <= half))


def _nearest_within(tree_pts: np.ndarray, tree_ids: list[int], queries: np.ndarray, tol: float) -> list[int]:
    """Index into tree_pts of the nearest point within tol for each query
    (ties to the lowest id), or -1."""
    out = [-1] * len(queries)
    if len(tree_pts) == 0 or len(queries) == 0:
        return out
    tree = cKDTree(tree_pts)
    for qi, hits in enumerate(tree.query_ball_point(queries, tol + 1e-12)):
        if hits:
            d = np.linalg.norm(tree_pts[hits] - queries[qi], axis=1)
            best = min(range(len(hits)), key=lambda j: (d[j], tree_ids[hits[j]]))
            out[qi] = hits[best]
    return out


def match_vertices(global_vs: list[GraphVertex], local_vs: list[GraphVertex], tol: float) -> dict[int, int]:
    """Mutual-nearest correspondences local id -> global id within ``tol``."""
    if not global_vs or not local_vs:
        return {}
    gp = np.array([v.position for v in global_vs])
    lp = np.array([v.position for v in local_vs])
    g_ids = [v.id for v in global_vs]
    l_ids = [v.id for v in local_vs]
    l2g = _nearest_within(gp, g_ids, lp, tol)
    g2l = _nearest_within(lp, l_ids, gp, tol)
    return {l_ids[li]: g_ids[gi] for li, gi in enumerate(l2g) if gi >= 0 and g2l[gi] == li}


def _revalidate(graph: VisibilityGraph, pmap: PolyhedralMap, pairs) -> int:
    pairs = list(pairs)
    if not pairs:
        return 0
    a = np.array([graph.vertex(i).position for i, _ in pairs])
    b = np.array([graph.vertex(j).position for _, j in pairs])
    ok = compiled_layers(pmap).visible_pairs(a, b)
    dropped = 0
    for (i, j), good in zip(pairs, ok):
        if not good:
            graph.remove_edge(i, j)
            dropped += 1
    return dropped


def merge_local(glob: GlobalGraph, local: VisibilityGraph, robot_pose, extent: float,
                global_map: Optional[PolyhedralMap] = None) -> GlobalGraph:
    """Fold one local graph into a copy of ``glob`` and return the copy.

    ``global_map``, when given, is the map every touched edge is checked
    against; if it differs from the previous merge's map, all edges are
    re-checked.
    """
    out = glob.copy()
    out.frame_index += 1
    g = out.graph

    if global_map is not None:
        fp = global_map.fingerprint()
        if fp != out.map_fingerprint:
            dropped = _revalidate(g, global_map, [(a, b) for a, b, _ in g.edges()])
            if dropped:
                log.debug("map changed: dropped %d stale edges", dropped)
            out.map_fingerprint = fp

    existing = g.vertices
    if existing:
        pos = np.array([v.position for v in existing])
        inside = _in_extent(pos, robot_pose, extent)
        candidates = [v for v, ok in zip(existing, inside) if ok]
    else:
        candidates = []
    local_vs = local.vertices
    l2g = match_vertices(candidates, local_vs, out.correspondence_tolerance)

    touched: set[int] = set()
    for lv in local_vs:
        gid = l2g.get(lv.id)
        if gid is not None:
            old = g.vertex(gid)
            if old.position != lv.position or old.layer != lv.layer:
                g.replace_vertex(GraphVertex(gid, lv.position, lv.layer, lv.polygon_id, lv.origin))
                touched.add(gid)
        else:
            gid = max(out.next_id, g.next_id())
            g.add_vertex(GraphVertex(gid, lv.position, lv.layer, lv.polygon_id, lv.origin))
            l2g[lv.id] = gid
            touched.add(gid)
        out.absence_counters[gid] = 0
        out.next_id = max(out.next_id, gid + 1)

    new_edges = []
    for a, b, kind in local.edges():
        ga, gb = l2g[a], l2g[b]
        if g.add_edge(ga, gb, kind):
            new_edges.append((ga, gb))
    if global_map is not None:
        check = set(new_edges)
        for vid in touched:
            for u in g.neighbors(vid):
                check.add((min(vid, u), max(vid, u)))
        _revalidate(g, global_map, sorted(check))

    observed = set(l2g.values())
    for v in candidates:
        if v.id in observed:
            continue
        c = out.absence_counters.get(v.id, 0) + 1
        if c >= out.disappear_frames:
            g.remove_vertex(v.id)
            out.absence_counters.pop(v.id, None)
        else:
            out.absence_counters[v.id] = c
    return out

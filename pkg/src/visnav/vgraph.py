"""Local 3D visibility graph construction.

Edges come from four sources: vertical contour links of the polyhedral map,
all-pairs visibility inside each layer, a breadth-first vertical
propagation from every vertex's same-layer visible set, and a few random
points sampled on existing edges.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from visnav.config import NavConfig
from visnav.extraction import SAMPLED, GraphVertex, PolyhedralMap
from visnav.geometry import compiled_layers

log = logging.getLogger(__name__)

SAME_LAYER = "same_layer"
INTER_LAYER = "inter_layer"
VERTICAL_CONTOUR = "vertical_contour"
SAMPLED_EDGE = "sampled"
EDGE_KINDS = (SAME_LAYER, INTER_LAYER, VERTICAL_CONTOUR, SAMPLED_EDGE)


def distance(a, b) -> float:
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)


class VisibilityGraph:
    """Undirected graph over GraphVertex objects.

    Weights are not stored; they are always the Euclidean distance between
    the current endpoint positions, so moving a vertex keeps them exact.
    """

    def __init__(self, vertices: Iterable[GraphVertex] = ()):
        self._vertices: dict[int, GraphVertex] = {}
        self._adj: dict[int, dict[int, str]] = {}
        # derived search structures, dropped on every mutation
        self._prepared = None
        for v in vertices:
            self.add_vertex(v)

    # vertices
    def add_vertex(self, v: GraphVertex) -> None:
        if v.id in self._vertices:
            raise ValueError(f"duplicate vertex id {v.id}")
        self._vertices[v.id] = v
        self._adj[v.id] = {}
        self._prepared = None

    def replace_vertex(self, v: GraphVertex) -> None:
        if v.id not in self._vertices:
            raise KeyError(v.id)
        self._vertices[v.id] = v
        self._prepared = None

    def remove_vertex(self, vid: int) -> None:
        for u in self._adj.pop(vid):
            del self._adj[u][vid]
        del self._vertices[vid]
        self._prepared = None

    def vertex(self, vid: int) -> GraphVertex:
        return self._vertices[vid]

    def __contains__(self, vid) -> bool:
        return vid in self._vertices

    def __len__(self) -> int:
        return len(self._vertices)

    @property
    def vertices(self) -> list[GraphVertex]:
        return [self._vertices[k] for k in sorted(self._vertices)]

    @property
    def vertex_ids(self) -> list[int]:
        return sorted(self._vertices)

    def next_id(self) -> int:
        return max(self._vertices, default=-1) + 1

    # edges
    def add_edge(self, a: int, b: int, kind: str) -> bool:
        """Add an undirected edge; an existing edge keeps its first kind."""
        if a == b:
            raise ValueError("self edges are not allowed")
        if kind not in EDGE_KINDS:
            raise ValueError(f"unknown edge kind {kind!r}")
        if a not in self._vertices or b not in self._vertices:
            raise KeyError(f"edge {a}-{b} references an unknown vertex")
        if b in self._adj[a]:
            return False
        self._adj[a][b] = kind
        self._adj[b][a] = kind
        self._prepared = None
        return True

    def remove_edge(self, a: int, b: int) -> None:
        del self._adj[a][b]
        del self._adj[b][a]
        self._prepared = None

    def has_edge(self, a: int, b: int) -> bool:
        return b in self._adj.get(a, ())

    def edge_kind(self, a: int, b: int) -> str:
        return self._adj[a][b]

    def weight(self, a: int, b: int) -> float:
        return distance(self._vertices[a].position, self._vertices[b].position)

    def neighbors(self, vid: int) -> dict[int, str]:
        return self._adj[vid]

    def degree(self, vid: int) -> int:
        return len(self._adj[vid])

    def edges(self) -> Iterator[tuple[int, int, str]]:
        """(a, b, kind) with a < b, sorted."""
        for a in sorted(self._adj):
            for b in sorted(self._adj[a]):
                if a < b:
                    yield a, b, self._adj[a][b]

    @property
    def edge_set(self) -> set[tuple[int, int]]:
        return {(a, b) for a, b, _ in self.edges()}

    @property
    def n_edges(self) -> int:
        return sum(len(n) for n in self._adj.values()) // 2

    def copy(self) -> "VisibilityGraph":
        g = VisibilityGraph()
        g._vertices = dict(self._vertices)
        g._adj = {k: dict(v) for k, v in self._adj.items()}
        return g

    def __eq__(self, other) -> bool:
        if not isinstance(other, VisibilityGraph):
            return NotImplemented
        return self._vertices == other._vertices and self._adj == other._adj

    def __repr__(self) -> str:
        return f"VisibilityGraph(n={len(self)}, edges={self.n_edges})"


@dataclass
class GraphStats:
    n: int = 0
    n_l: list[int] = field(default_factory=list)
    m: int = 0
    k: float = 0.0
    lambda_: float = 1.0
    build_time: float = 0.0  # ms

    @property
    def K(self) -> float:
        return self.k / (4.0 * self.lambda_)

    def to_dict(self) -> dict:
        return {"n": self.n, "n_l": list(self.n_l), "m": self.m, "k": self.k,
                "lambda": self.lambda_, "build_time_ms": self.build_time}


def _layer_ids(pmap: PolyhedralMap) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {s.index: [] for s in pmap.slabs}
    for v in pmap.vertices:
        out[v.layer].append(v.id)
    return out


def same_layer_visibility(pmap: PolyhedralMap, v: GraphVertex) -> set[int]:
    """Ids of the vertices in v's layer visible from v."""
    others = [u for u in pmap.vertices if u.layer == v.layer and u.id != v.id]
    if not others:
        return set()
    vis = compiled_layers(pmap).visible_many(v.position, np.array([u.position for u in others]))
    return {u.id for u, ok in zip(others, vis) if ok}


def _propagate(compiled, src_pos, seeds: Iterable[int], visited: set[int],
               positions: dict[int, tuple], vert_nbrs: dict[int, list[int]]) -> list[int]:
    """Breadth-first over vertical links; each reached vertex is checked
    against ``src_pos`` once and only visible ones expand further."""
    found: list[int] = []
    frontier = sorted(seeds)
    while frontier:
        cand = []
        for u in frontier:
            for w in vert_nbrs.get(u, ()):
                if w not in visited:
                    visited.add(w)
                    cand.append(w)
        if not cand:
            break
        cand.sort()
        vis = compiled.visible_many(src_pos, np.array([positions[w] for w in cand]))
        frontier = [w for w, ok in zip(cand, vis) if ok]
        found.extend(frontier)
    return found


def propagate_vertical_visibility(pmap: PolyhedralMap, v: GraphVertex, seeds) -> set[int]:
    """Vertices reached by expanding ``seeds`` over vertical contour links
    while staying visible from v."""
    seeds = set(seeds)
    if not seeds:
        return set()
    positions = {u.id: u.position for u in pmap.vertices}
    same = {u.id for u in pmap.vertices if u.layer == v.layer}
    visited = same | seeds | {v.id}
    return set(_propagate(compiled_layers(pmap), v.position, seeds, visited,
                          positions, pmap.vertical_neighbors))


def _connect_point(graph: VisibilityGraph, compiled, pos, layer: int, exclude: set[int],
                   vert_nbrs: dict[int, list[int]], by_layer: dict[int, list[int]]) -> list[int]:
    """Same-layer plus propagated visibility of an arbitrary point against graph vertices."""
    same = [u for u in by_layer.get(layer, ()) if u not in exclude]
    if not same:
        return []
    vis = compiled.visible_many(pos, np.array([graph.vertex(u).position for u in same]))
    seeds = [u for u, ok in zip(same, vis) if ok]
    visited = set(by_layer.get(layer, ())) | exclude
    positions = {u: graph.vertex(u).position for u in graph.vertex_ids}
    return seeds + _propagate(compiled, pos, seeds, visited, positions, vert_nbrs)


def sample_extra_vertices(graph: VisibilityGraph, pmap: PolyhedralMap, config: NavConfig,
                          elapsed: float, rng: Optional[np.random.Generator] = None) -> list[GraphVertex]:
    """Add up to ``config.sample_count`` points drawn on existing edges.

    The graph is extended in place; the vertices that gained at least one
    edge are returned. Skipped when ``elapsed`` (ms) has reached the budget
    and budgets are enforced.
    """
    if not config.deterministic and elapsed >= config.time_budget:
        return []
    edges = list(graph.edges())
    if not edges or config.sample_count == 0:
        return []
    rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
    compiled = compiled_layers(pmap)
    vert_nbrs: dict[int, list[int]] = {}
    by_layer: dict[int, list[int]] = {}
    for vid in graph.vertex_ids:
        v = graph.vertex(vid)
        by_layer.setdefault(v.layer, []).append(vid)
    for a, b, kind in edges:
        if kind == VERTICAL_CONTOUR:
            vert_nbrs.setdefault(a, []).append(b)
            vert_nbrs.setdefault(b, []).append(a)
    picks = rng.integers(0, len(edges), size=config.sample_count)
    ts = rng.random(config.sample_count)
    added = []
    next_id = graph.next_id()
    for ei, t in zip(picks, ts):
        a, b, _ = edges[int(ei)]
        pa, pb = graph.vertex(a).position, graph.vertex(b).position
        pos = tuple(float(pa[i] + t * (pb[i] - pa[i])) for i in range(3))
        layer = compiled.slab_index(pos[2])
        nbrs = _connect_point(graph, compiled, pos, layer, set(), vert_nbrs, by_layer)
        if not nbrs:
            continue
        sv = GraphVertex(next_id, pos, layer, None, SAMPLED)
        next_id += 1
        graph.add_vertex(sv)
        for u in nbrs:
            graph.add_edge(sv.id, u, SAMPLED_EDGE)
        by_layer.setdefault(layer, []).append(sv.id)
        added.append(sv)
    return added


def build_local_graph(pmap: PolyhedralMap, config: NavConfig,
                      rng: Optional[np.random.Generator] = None) -> tuple[VisibilityGraph, GraphStats]:
    t0 = time.perf_counter()
    compiled = compiled_layers(pmap)
    graph = VisibilityGraph(pmap.vertices)
    by_layer = _layer_ids(pmap)
    positions = {v.id: v.position for v in pmap.vertices}

    if pmap.vertical_edges:
        va = np.array([positions[a] for a, _ in pmap.vertical_edges])
        vb = np.array([positions[b] for _, b in pmap.vertical_edges])
        for (a, b), ok in zip(pmap.vertical_edges, compiled.visible_pairs(va, vb)):
            if ok:
                graph.add_edge(a, b, VERTICAL_CONTOUR)
            else:
                log.debug("vertical link %d-%d blocked, skipped", a, b)

    ratios = []
    seeds_of: dict[int, list[int]] = {}
    for layer, ids in by_layer.items():
        if not ids:
            continue
        pts = np.array([positions[i][:2] for i in ids])
        vis = compiled.layer_allpairs(layer, pts)
        ii, jj = np.nonzero(np.triu(vis, 1))
        for i, j in zip(ii.tolist(), jj.tolist()):
            graph.add_edge(ids[i], ids[j], SAME_LAYER)
        counts = vis.sum(axis=1) - np.diag(vis)
        for row, vid in enumerate(ids):
            seeds_of[vid] = [ids[j] for j in np.nonzero(vis[row])[0] if j != row]
            if counts[row] > 0:
                ratios.append((len(ids) - 1) / counts[row])

    vert_nbrs = pmap.vertical_neighbors
    for v in pmap.vertices:
        seeds = seeds_of.get(v.id, [])
        if not seeds:
            continue
        visited = set(by_layer[v.layer])
        for u in _propagate(compiled, v.position, seeds, visited, positions, vert_nbrs):
            graph.add_edge(v.id, u, INTER_LAYER)

    elapsed = (time.perf_counter() - t0) * 1e3
    sample_extra_vertices(graph, pmap, config, elapsed, rng)

    n_l = [0] * len(pmap.slabs)
    for v in graph.vertices:
        n_l[v.layer] += 1
    n = len(graph)
    stats = GraphStats(
        n=n,
        n_l=n_l,
        m=len(pmap.slabs),
        k=2.0 * len(pmap.vertical_edges) / n if n else 0.0,
        lambda_=float(np.mean(ratios)) if ratios else 1.0,
        build_time=(time.perf_counter() - t0) * 1e3,
    )
    return graph, stats

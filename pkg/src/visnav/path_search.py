"""Shortest paths on the visibility graph and divide-and-conquer refinement.

The initial path is restricted to graph vertices. Refinement splits the
waypoints into odd and even subsets, tries straight shortcuts across the
skipped waypoints, and where a shortcut is blocked inserts the points where
it crosses the top contour of an obstacle column, lifted onto that top.
Dijkstra is then re-run on the enlarged search graph.
"""
from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from visnav.config import NavConfig
from visnav.extraction import GraphVertex, PolyhedralMap
from visnav.geometry import Point3, as_point3, compiled_layers, point_in_polygon, segment_polygon_intersections
from visnav.vgraph import INTER_LAYER, SAME_LAYER, VERTICAL_CONTOUR, VisibilityGraph

log = logging.getLogger(__name__)

TERMINAL = "terminal"
INSERTED = "inserted"
CONVERGENCE_TOL = 1e-6
# inserted points sit this far above the obstacle column top
LIFT_EPS = 1e-6
# shrink factor on the straight-line bound that orders the search heap
GOAL_BOUND_SCALE = 1.0 - 1e-9


class TerminalInCollisionError(ValueError):
    pass


class UnreachableError(RuntimeError):
    pass


@dataclass
class Path:
    waypoints: list[Point3]
    length: float = field(default=math.nan)
    # search-graph node of each waypoint, when known
    nodes: Optional[list[int]] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.waypoints = [as_point3(p) for p in self.waypoints]
        if not self.waypoints:
            raise ValueError("a path needs at least one waypoint")
        self.length = path_length(self.waypoints)

    def __len__(self) -> int:
        return len(self.waypoints)


def path_length(points: Sequence) -> float:
    total = 0.0
    for a, b in zip(points, points[1:]):
        total += math.dist(a, b)
    return total


@dataclass
class RefineState:
    current: Path
    inserted: list[GraphVertex] = field(default_factory=list)
    iteration: int = 0
    division_depth: int = 0
    converged: bool = False
    history: list[float] = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    space: Optional["SearchSpace"] = field(default=None, repr=False, compare=False)


# ---------------------------------------------------------------- search core

@njit(cache=True)
def _heap_push(hd, hh, hn, size, d, h, n):
    i = size
    hd[i] = d
    hh[i] = h
    hn[i] = n
    while i > 0:
        p = (i - 1) >> 1
        if (hd[p], hh[p], hn[p]) <= (hd[i], hh[i], hn[i]):
            break
        hd[p], hd[i] = hd[i], hd[p]
        hh[p], hh[i] = hh[i], hh[p]
        hn[p], hn[i] = hn[i], hn[p]
        i = p
    return size + 1


@njit(cache=True)
def _heap_pop(hd, hh, hn, size):
    d, h, n = hd[0], hh[0], hn[0]
    size -= 1
    hd[0], hh[0], hn[0] = hd[size], hh[size], hn[size]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        m = i
        if l < size and (hd[l], hh[l], hn[l]) < (hd[m], hh[m], hn[m]):
            m = l
        if r < size and (hd[r], hh[r], hn[r]) < (hd[m], hh[m], hn[m]):
            m = r
        if m == i:
            break
        hd[m], hd[i] = hd[i], hd[m]
        hh[m], hh[i] = hh[i], hh[m]
        hn[m], hn[i] = hn[i], hn[m]
        i = m
    return d, h, n, size


@njit(cache=True)
def _dijkstra_next(n_total, b_ptr, b_idx, b_w, x_ptr, x_idx, x_w, pos, src, dst):
    """Search from ``dst`` towards ``src``; returns next-hop pointers.

    Keys are (distance, hops); among equal keys the smallest neighbour is
    kept as next hop, which makes the forward path from ``src`` the
    lexicographically smallest of the optimal ones.

    The heap is ordered by distance plus a slightly shrunk straight-line
    distance to ``src``. Weights are Euclidean, so this bound is consistent
    with slack and every node on an optimal route is still settled before
    ``src``; it only skips nodes that cannot lie on one.
    """
    n_base = b_ptr.shape[0] - 1
    dist = np.full(n_total, np.inf)
    hops = np.full(n_total, np.iinfo(np.int64).max)
    nxt = np.full(n_total, -1, dtype=np.int64)
    done = np.zeros(n_total, dtype=np.bool_)
    cap = b_idx.shape[0] + x_idx.shape[0] + 2
    hd = np.empty(cap)
    hh = np.empty(cap, dtype=np.int64)
    hn = np.empty(cap, dtype=np.int64)
    sx = pos[src, 0]
    sy = pos[src, 1]
    sz = pos[src, 2]
    dist[dst] = 0.0
    hops[dst] = 0
    size = _heap_push(hd, hh, hn, 0, 0.0, 0, dst)
    while size > 0:
        _, h, u, size = _heap_pop(hd, hh, hn, size)
        if done[u]:
            continue
        if h != hops[u]:
            continue
        d = dist[u]
        done[u] = True
        if u == src:
            break
        for part in range(2):
            if part == 0:
                if u >= n_base:
                    continue
                lo = b_ptr[u]
                hi = b_ptr[u + 1]
            else:
                lo = x_ptr[u]
                hi = x_ptr[u + 1]
            for k in range(lo, hi):
                if part == 0:
                    v = b_idx[k]
                    w = b_w[k]
                else:
                    v = x_idx[k]
                    w = x_w[k]
                if done[v]:
                    continue
                nd = d + w
                nh = h + 1
                if nd < dist[v] or (nd == dist[v] and (nh < hops[v] or (nh == hops[v] and u < nxt[v]))):
                    improved = nd < dist[v] or nh < hops[v]
                    dist[v] = nd
                    hops[v] = nh
                    nxt[v] = u
                    if improved:
                        if size >= cap:
                            # grow the heap arrays
                            hd = np.concatenate((hd, np.empty(cap)))
                            hh = np.concatenate((hh, np.empty(cap, dtype=np.int64)))
                            hn = np.concatenate((hn, np.empty(cap, dtype=np.int64)))
                            cap *= 2
                        est = GOAL_BOUND_SCALE * math.sqrt((pos[v, 0] - sx) ** 2 + (pos[v, 1] - sy) ** 2
                                                           + (pos[v, 2] - sz) ** 2)
                        size = _heap_push(hd, hh, hn, size, nd + est, nh, v)
    return nxt, done[src]


class _Prepared:
    """Array form of a VisibilityGraph, cached on the graph until it mutates."""

    def __init__(self, graph: VisibilityGraph):
        self.ids = np.array(graph.vertex_ids, dtype=np.int64)
        self.index = {int(v): i for i, v in enumerate(self.ids)}
        verts = [graph.vertex(int(v)) for v in self.ids]
        self.pos = np.array([v.position for v in verts], dtype=float).reshape(-1, 3)
        self.layers = np.array([v.layer for v in verts], dtype=np.int64)
        n = len(self.ids)
        counts = np.zeros(n + 1, dtype=np.int64)
        rows, cols = [], []
        self.vert_nbrs: list[list[int]] = [[] for _ in range(n)]
        index = self.index
        for i, vid in enumerate(self.ids):
            nb = graph.neighbors(int(vid))
            counts[i + 1] = len(nb)
            for u in sorted(nb):
                j = index[u]
                cols.append(j)
                if nb[u] == VERTICAL_CONTOUR:
                    self.vert_nbrs[i].append(j)
        self.indptr = np.cumsum(counts)
        self.indices = np.array(cols, dtype=np.int64)
        rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(self.indptr))
        if len(rows):
            self.weights = np.linalg.norm(self.pos[rows] - self.pos[self.indices], axis=1)
        else:
            self.weights = np.zeros(0)
        self.by_layer: dict[int, np.ndarray] = {}
        for layer in np.unique(self.layers):
            self.by_layer[int(layer)] = np.nonzero(self.layers == layer)[0]


def prepared(graph: VisibilityGraph) -> _Prepared:
    if graph._prepared is None:
        graph._prepared = _Prepared(graph)
    return graph._prepared


class SearchSpace:
    """A graph snapshot plus temporary nodes (terminals, inserted points)
    and extra edges. Nodes are indexed: graph vertices first in id order,
    temporaries after."""

    def __init__(self, graph: VisibilityGraph, pmap: Optional[PolyhedralMap] = None):
        self.graph = graph
        self.pmap = pmap
        self.base = prepared(graph)
        self.compiled = compiled_layers(pmap) if pmap is not None else None
        self.n_base = len(self.base.ids)
        self.extra_pos: list[tuple] = []
        self.extra_layer: list[int] = []
        self.extra_edges: dict[int, set[int]] = {}
        self._x_csr = None

    @property
    def n_nodes(self) -> int:
        return self.n_base + len(self.extra_pos)

    def position(self, i: int) -> tuple:
        if i < self.n_base:
            return tuple(float(c) for c in self.base.pos[i])
        return self.extra_pos[i - self.n_base]

    def positions(self, idx) -> np.ndarray:
        return np.array([self.position(int(i)) for i in idx], dtype=float).reshape(-1, 3)

    def add_node(self, pos, layer: int) -> int:
        self.extra_pos.append(tuple(float(c) for c in pos))
        self.extra_layer.append(layer)
        self._x_csr = None
        return self.n_nodes - 1

    def has_edge(self, i: int, j: int) -> bool:
        if j in self.extra_edges.get(i, ()):
            return True
        if i < self.n_base and j < self.n_base:
            b = self.base
            return j in b.indices[b.indptr[i]:b.indptr[i + 1]]
        return False

    def add_edge(self, i: int, j: int) -> bool:
        if i == j or self.has_edge(i, j):
            return False
        self.extra_edges.setdefault(i, set()).add(j)
        self.extra_edges.setdefault(j, set()).add(i)
        self._x_csr = None
        return True

    def visible_from(self, pos, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) == 0:
            return np.zeros(0, dtype=bool)
        return self.compiled.visible_many(pos, self.positions(idx))

    def visible_graph_nodes(self, pos) -> list[int]:
        """Graph vertices visible from ``pos``: its layer (or the nearest
        layer holding vertices) plus breadth-first vertical propagation."""
        by_layer = self.base.by_layer
        if not by_layer:
            return []
        layer = self.compiled.slab_index(pos[2])
        if layer not in by_layer:
            layer = min(by_layer, key=lambda l: (abs(l - layer), l))
        same = by_layer[layer]
        vis = self.visible_from(pos, same)
        seeds = [int(i) for i in same[vis]]
        visited = set(int(i) for i in same)
        found = list(seeds)
        frontier = seeds
        nbrs = self.base.vert_nbrs
        while frontier:
            cand = []
            for u in frontier:
                for w in nbrs[u]:
                    if w not in visited:
                        visited.add(w)
                        cand.append(w)
            if not cand:
                break
            cand.sort()
            ok = self.visible_from(pos, cand)
            frontier = [w for w, good in zip(cand, ok) if good]
            found.extend(frontier)
        return found

    def _all_positions(self) -> np.ndarray:
        if not self.extra_pos:
            return self.base.pos
        return np.vstack([self.base.pos, np.array(self.extra_pos, dtype=float)])

    def _extra_csr(self):
        if self._x_csr is None:
            n = self.n_nodes
            counts = np.zeros(n + 1, dtype=np.int64)
            cols = []
            for i in range(n):
                nb = sorted(self.extra_edges.get(i, ()))
                counts[i + 1] = len(nb)
                cols.extend(nb)
            ptr = np.cumsum(counts)
            idx = np.array(cols, dtype=np.int64)
            rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(ptr))
            if len(idx):
                pos = self.positions(range(n))
                w = np.linalg.norm(pos[rows] - pos[idx], axis=1)
            else:
                w = np.zeros(0)
            self._x_csr = (ptr, idx, w)
        return self._x_csr

    def shortest(self, src: int, dst: int) -> Optional[list[int]]:
        if src == dst:
            return [src]
        b = self.base
        x_ptr, x_idx, x_w = self._extra_csr()
        nxt, found = _dijkstra_next(self.n_nodes, b.indptr, b.indices, b.weights,
                                    x_ptr, x_idx, x_w, self._all_positions(), src, dst)
        if not found:
            return None
        route = [src]
        while route[-1] != dst:
            route.append(int(nxt[route[-1]]))
        return route

    def path(self, nodes: list[int]) -> Path:
        return Path([self.position(i) for i in nodes], nodes=list(nodes))


# ---------------------------------------------------------------- public ops

def _check_terminal(space: SearchSpace, p) -> None:
    if space.compiled.point_blocked(p):
        raise TerminalInCollisionError(f"terminal {tuple(p)} lies inside an obstacle")


def _attach(space: SearchSpace, p_robot, p_goal) -> tuple[int, int]:
    p_robot, p_goal = as_point3(p_robot), as_point3(p_goal)
    _check_terminal(space, p_robot)
    _check_terminal(space, p_goal)
    ids = []
    for p in (p_robot, p_goal):
        nbrs = space.visible_graph_nodes(p)
        node = space.add_node(p, space.compiled.slab_index(p[2]))
        for u in nbrs:
            space.add_edge(node, u)
        ids.append(node)
    s, g = ids
    if space.compiled.visible(p_robot, p_goal):
        space.add_edge(s, g)
    return s, g


def attach_terminals(graph: VisibilityGraph, pmap: PolyhedralMap, p_robot, p_goal) -> VisibilityGraph:
    """Copy of ``graph`` with the two terminals added and connected to every
    vertex they see. Terminal ids are the next two free ids (robot first)."""
    space = SearchSpace(graph, pmap)
    s, g = _attach(space, p_robot, p_goal)
    out = graph.copy()
    base_id = out.next_id()
    new_ids = {s: base_id, g: base_id + 1}
    for node in (s, g):
        p = space.position(node)
        out.add_vertex(GraphVertex(new_ids[node], p, space.extra_layer[node - space.n_base], None, TERMINAL))
    for node in (s, g):
        tid = new_ids[node]
        for u in sorted(space.extra_edges.get(node, ())):
            other = new_ids[u] if u in new_ids else int(space.base.ids[u])
            kind = SAME_LAYER if out.vertex(other).layer == out.vertex(tid).layer else INTER_LAYER
            out.add_edge(tid, other, kind)
    return out


def dijkstra(graph: VisibilityGraph, start_id: int, goal_id: int) -> Optional[Path]:
    """Minimum-length path between two graph vertices, or None."""
    space = SearchSpace(graph)
    idx = space.base.index
    if start_id not in idx or goal_id not in idx:
        raise KeyError("start or goal id not in graph")
    route = space.shortest(idx[start_id], idx[goal_id])
    if route is None:
        return None
    path = space.path(route)
    path.nodes = [int(space.base.ids[i]) for i in route]
    return path


def _column_top(pmap: PolyhedralMap, layer: int, xy) -> int:
    """Highest layer of the obstacle column above ``xy`` starting at ``layer``."""
    polys = pmap.base.polygons_per_layer
    while layer + 1 < len(polys) and any(point_in_polygon(xy, p) for p in polys[layer + 1]):
        layer += 1
    return layer


def _shortcut_pairs(n: int) -> tuple[list[tuple[int, int]], int]:
    """Non-adjacent waypoint pairs visited by the odd/even split, in
    breadth-first order, plus the split depth reached."""
    pairs: list[tuple[int, int]] = []
    seen = set()
    queue = deque([(list(range(n)), 0)])
    depth = 0
    while queue:
        subset, d = queue.popleft()
        inner = subset[1:-1]
        if not inner:
            continue
        depth = max(depth, d + 1)
        for part in (inner[0::2], inner[1::2]):
            sub = [subset[0]] + part + [subset[-1]]
            for i, j in zip(sub, sub[1:]):
                if j - i > 1 and (i, j) not in seen:
                    seen.add((i, j))
                    pairs.append((i, j))
            if len(part) > 1:
                queue.append((sub, d + 1))
            elif part and (sub[0], sub[-1]) not in seen:
                # the pair a further split of a 3-waypoint subset would yield
                seen.add((sub[0], sub[-1]))
                pairs.append((sub[0], sub[-1]))
    return pairs, depth


def _divide(path: Path, pmap: PolyhedralMap, budget_ms: Optional[float]):
    """Shortcut pairs that are directly visible, lifted insert candidates
    for the blocked ones, and the division depth."""
    t0 = time.perf_counter()
    compiled = compiled_layers(pmap)
    wps = path.waypoints
    pairs, depth = _shortcut_pairs(len(wps))
    if not pairs:
        return [], [], 0
    a = np.array([wps[i] for i, _ in pairs])
    b = np.array([wps[j] for _, j in pairs])
    vis = compiled.visible_pairs(a, b)
    direct = [p for p, ok in zip(pairs, vis) if ok]
    top = pmap.top_polygons()
    polys = pmap.base.polygons_per_layer
    slabs = pmap.slabs
    z_ceiling = slabs[-1].z_max if slabs else 0.0
    inserts: list[tuple] = []
    for (i, j), ok in zip(pairs, vis):
        if ok:
            continue
        if budget_ms is not None and (time.perf_counter() - t0) * 1e3 > budget_ms:
            log.debug("insert budget exhausted after %d candidates", len(inserts))
            break
        seg = (wps[i][:2], wps[j][:2])
        for layer, pid in top:
            for x, y in segment_polygon_intersections(seg, polys[layer][pid]):
                top_layer = _column_top(pmap, layer, (x, y))
                z = slabs[top_layer].z_max + LIFT_EPS
                if z > z_ceiling:
                    continue
                p = (float(x), float(y), float(z))
                if compiled.point_blocked(p):
                    continue
                if any(math.dist(p, q) <= 1e-9 for q in inserts):
                    continue
                inserts.append(p)
    return direct, inserts, depth


def divide_and_insert(path: Path, pmap: PolyhedralMap, budget: Optional[float] = None) -> list[GraphVertex]:
    """Lifted obstacle-top crossing points of the blocked odd/even shortcuts.

    Only points that see at least one path waypoint or graph-free point are
    kept by the caller; here every free, below-ceiling candidate is returned
    with ids counting from 0.
    """
    _, inserts, _ = _divide(path, pmap, budget)
    compiled = compiled_layers(pmap)
    return [GraphVertex(k, p, compiled.slab_index(p[2]), None, INSERTED) for k, p in enumerate(inserts)]


def _ensure_space(state: RefineState, graph: VisibilityGraph, pmap: PolyhedralMap) -> SearchSpace:
    space = state.space
    if space is None or space.graph is not graph:
        space = SearchSpace(graph, pmap)
        s, g = _attach(space, state.current.waypoints[0], state.current.waypoints[-1])
        nodes = [s]
        prev = s
        for wp in state.current.waypoints[1:-1]:
            node = space.add_node(wp, space.compiled.slab_index(wp[2]))
            space.add_edge(prev, node)
            nodes.append(node)
            prev = node
        space.add_edge(prev, g)
        nodes.append(g)
        state.current.nodes = nodes
        state.space = space
    return space


def refine_once(state: RefineState, graph: VisibilityGraph, pmap: PolyhedralMap,
                budget: Optional[float] = None) -> RefineState:
    if state.converged:
        return state
    t0 = time.perf_counter()
    space = _ensure_space(state, graph, pmap)
    current = state.current
    nodes = current.nodes
    direct, inserts, depth = _divide(current, pmap, budget)
    added = 0
    for i, j in direct:
        added += space.add_edge(nodes[i], nodes[j])

    accepted: list[GraphVertex] = []
    new_nodes = []
    for p in inserts:
        targets = list(dict.fromkeys(nodes))
        prior = [space.n_base + k for k in range(len(space.extra_pos))]
        targets += [t for t in prior if t not in targets]
        vis = space.visible_from(p, targets)
        links = [t for t, ok in zip(targets, vis) if ok]
        links += [u for u in space.visible_graph_nodes(p) if u not in links]
        if not links:
            continue
        node = space.add_node(p, space.compiled.slab_index(p[2]))
        for u in links:
            space.add_edge(node, u)
        new_nodes.append(node)
        accepted.append(GraphVertex(len(state.inserted) + len(accepted), p, space.extra_layer[-1], None, INSERTED))
    added += len(new_nodes)

    route = space.shortest(nodes[0], nodes[-1])
    new_path = space.path(route) if route is not None else current
    if new_path.length > current.length:
        # the previous route is still in the search graph; keep it on float noise
        new_path = current
    improvement = current.length - new_path.length
    state.current = new_path
    state.inserted.extend(accepted)
    state.iteration += 1
    state.division_depth = max(state.division_depth, depth)
    state.history.append(new_path.length)
    state.converged = improvement < CONVERGENCE_TOL or added == 0
    state.timing.setdefault("refine_ms", []).append((time.perf_counter() - t0) * 1e3)
    return state


def plan(graph: VisibilityGraph, pmap: PolyhedralMap, p_robot, p_goal,
         config: NavConfig) -> tuple[Path, RefineState]:
    """Attach terminals, search, and refine up to ``max_refine_iterations``."""
    t0 = time.perf_counter()
    space = SearchSpace(graph, pmap)
    s, g = _attach(space, p_robot, p_goal)
    t1 = time.perf_counter()
    route = space.shortest(s, g)
    t2 = time.perf_counter()
    if route is None:
        raise UnreachableError("no path between the terminals on the current graph")
    state = RefineState(space.path(route), space=space)
    state.history.append(state.current.length)
    state.timing = {"attach_ms": (t1 - t0) * 1e3, "search_ms": (t2 - t1) * 1e3, "refine_ms": []}
    for _ in range(config.max_refine_iterations):
        if state.converged:
            break
        elapsed = (time.perf_counter() - t0) * 1e3
        remaining = None
        if not config.deterministic:
            remaining = config.time_budget - elapsed
            if remaining <= 0:
                break
        refine_once(state, graph, pmap, remaining)
    state.timing["total_ms"] = (time.perf_counter() - t0) * 1e3
    return state.current, state

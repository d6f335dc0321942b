"""Reference machinery: voxel A*, exhaustive visibility graph, dense-sampling
collision checks.

The voxel and collision checks use their own plain numpy geometry so they
do not share failure modes with the compiled visibility kernels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from visnav.extraction import LayeredPolygonMap, PolyhedralMap
from visnav.path_search import Path
from visnav.vgraph import INTER_LAYER, SAME_LAYER, VERTICAL_CONTOUR, VisibilityGraph

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)


def _layered(map_like) -> LayeredPolygonMap:
    return map_like.base if isinstance(map_like, PolyhedralMap) else map_like


# ------------------------------------------------------------- polygon tests

def points_in_polygon(pts: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd test for many points (boundary points land on either side)."""
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    v = np.asarray(vertices, dtype=float)
    for (x0, y0), (x1, y1) in zip(v, np.roll(v, -1, axis=0)):
        if y0 == y1:
            continue
        crosses = (y0 > y) != (y1 > y)
        xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xi)
    return inside


def distance_to_boundary(pts: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    best = np.full(len(pts), np.inf)
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        ab = b - a
        l2 = float(ab @ ab)
        t = np.clip(((pts - a) @ ab) / l2, 0.0, 1.0) if l2 > 0 else np.zeros(len(pts))
        d = np.hypot(*(pts - (a + t[:, None] * ab)).T)
        best = np.minimum(best, d)
    return best


def points_in_collision(pts: np.ndarray, map_like, tol: float = 1e-6) -> np.ndarray:
    """Points lying inside some polygon of a slab containing their z by more than ``tol``."""
    lm = _layered(map_like)
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    hit = np.zeros(len(pts), dtype=bool)
    for slab, polys in zip(lm.slabs, lm.polygons_per_layer):
        sel = np.nonzero((pts[:, 2] >= slab.z_min) & (pts[:, 2] <= slab.z_max) & ~hit)[0]
        if len(sel) == 0:
            continue
        xy = pts[sel, :2]
        for poly in polys:
            xmin, ymin, xmax, ymax = poly.bbox
            box = (xy[:, 0] > xmin) & (xy[:, 0] < xmax) & (xy[:, 1] > ymin) & (xy[:, 1] < ymax)
            if not box.any():
                continue
            cand = np.nonzero(box)[0]
            inside = points_in_polygon(xy[cand], poly.vertices)
            cand = cand[inside]
            if len(cand) == 0:
                continue
            deep = distance_to_boundary(xy[cand], poly.vertices) > tol
            hit[sel[cand[deep]]] = True
    return hit


def sample_segment(a, b, step: float = 0.01) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(1, int(math.ceil(np.linalg.norm(b - a) / step)))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return a + t * (b - a)


def segment_collides(a, b, map_like, step: float = 0.01, tol: float = 1e-6) -> bool:
    return bool(points_in_collision(sample_segment(a, b, step), map_like, tol).any())


def polyline_collisions(points: Sequence, map_like, step: float = 0.01, tol: float = 1e-6) -> list[int]:
    """Indices i of segments points[i] -> points[i+1] that fail the sampling check."""
    bad = []
    for i, (a, b) in enumerate(zip(points, points[1:])):
        if segment_collides(a, b, map_like, step, tol):
            bad.append(i)
    return bad


# ------------------------------------------------------------- voxel A*

@dataclass
class VoxelGrid3D:
    resolution: float
    origin: tuple[float, float, float]
    occupancy: np.ndarray  # (nx, ny, nz) bool

    def __post_init__(self) -> None:
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.occupancy.ndim != 3:
            raise ValueError("occupancy must be 3-D")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.occupancy.shape)

    def center(self, idx) -> tuple[float, float, float]:
        r = self.resolution
        return tuple(float(self.origin[k] + (idx[k] + 0.5) * r) for k in range(3))

    def index_of(self, p) -> tuple[int, int, int]:
        r = self.resolution
        return tuple(int(math.floor((p[k] - self.origin[k]) / r)) for k in range(3))

    def in_bounds(self, idx) -> bool:
        return all(0 <= idx[k] < self.occupancy.shape[k] for k in range(3))


def voxelize(map_like, bounds, resolution: Optional[float] = None) -> VoxelGrid3D:
    """Voxel grid over ``bounds`` ((xmin, ymin, zmin), (xmax, ymax, zmax));
    a voxel is occupied when its center lies inside a polygon of the slab
    holding the center's z."""
    lm = _layered(map_like)
    res = resolution or lm.resolution
    (x0, y0, z0), (x1, y1, z1) = bounds
    # keep voxel faces on the map's lattice so centers never sit on cell edges
    x0 = math.floor(x0 / res) * res
    y0 = math.floor(y0 / res) * res
    nx = int(math.ceil((x1 - x0) / res - 1e-9))
    ny = int(math.ceil((y1 - y0) / res - 1e-9))
    nz = int(math.ceil((z1 - z0) / res - 1e-9))
    occ = np.zeros((nx, ny, nz), dtype=bool)
    cx = x0 + (np.arange(nx) + 0.5) * res
    cy = y0 + (np.arange(ny) + 0.5) * res
    cz = z0 + (np.arange(nz) + 0.5) * res
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    xy = np.column_stack([gx.ravel(), gy.ravel()])
    for slab, polys in zip(lm.slabs, lm.polygons_per_layer):
        ks = np.nonzero((cz >= slab.z_min) & (cz <= slab.z_max))[0]
        if len(ks) == 0 or not polys:
            continue
        mask = np.zeros(len(xy), dtype=bool)
        for poly in polys:
            xmin, ymin, xmax, ymax = poly.bbox
            box = np.nonzero((xy[:, 0] >= xmin) & (xy[:, 0] <= xmax) & (xy[:, 1] >= ymin) & (xy[:, 1] <= ymax))[0]
            if len(box):
                mask[box[points_in_polygon(xy[box], poly.vertices)]] = True
        occ[:, :, ks] |= mask.reshape(nx, ny)[:, :, None]
    return VoxelGrid3D(res, (x0, y0, z0), occ)


@njit(cache=True)
def _octile(dx, dy, dz):
    a = abs(dx)
    b = abs(dy)
    c = abs(dz)
    hi = max(a, b, c)
    lo = min(a, b, c)
    mid = a + b + c - hi - lo
    return SQRT3 * lo + SQRT2 * (mid - lo) + (hi - mid)


@njit(cache=True)
def _astar(occ, s, g, use_heuristic):
    nx, ny, nz = occ.shape
    n = nx * ny * nz
    gcost = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=np.bool_)
    start = (s[0] * ny + s[1]) * nz + s[2]
    goal = (g[0] * ny + g[1]) * nz + g[2]
    cap = 1 << 16
    hf = np.empty(cap)
    hn = np.empty(cap, dtype=np.int64)
    size = 0
    gcost[start] = 0.0
    hf[0] = 0.0
    hn[0] = start
    size = 1
    steps = np.empty((26, 3), dtype=np.int64)
    costs = np.empty(26)
    k = 0
    for ddx in range(-1, 2):
        for ddy in range(-1, 2):
            for ddz in range(-1, 2):
                if ddx == 0 and ddy == 0 and ddz == 0:
                    continue
                steps[k, 0] = ddx
                steps[k, 1] = ddy
                steps[k, 2] = ddz
                costs[k] = math.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
                k += 1
    while size > 0:
        # pop
        f0 = hf[0]
        u = hn[0]
        size -= 1
        hf[0] = hf[size]
        hn[0] = hn[size]
        i = 0
        while True:
            l = 2 * i + 1
            r = l + 1
            m = i
            if l < size and (hf[l] < hf[m] or (hf[l] == hf[m] and hn[l] < hn[m])):
                m = l
            if r < size and (hf[r] < hf[m] or (hf[r] == hf[m] and hn[r] < hn[m])):
                m = r
            if m == i:
                break
            hf[m], hf[i] = hf[i], hf[m]
            hn[m], hn[i] = hn[i], hn[m]
            i = m
        if closed[u]:
            continue
        closed[u] = True
        if u == goal:
            break
        uz = u % nz
        uy = (u // nz) % ny
        ux = u // (nz * ny)
        for k in range(26):
            vx = ux + steps[k, 0]
            vy = uy + steps[k, 1]
            vz = uz + steps[k, 2]
            if vx < 0 or vy < 0 or vz < 0 or vx >= nx or vy >= ny or vz >= nz:
                continue
            if occ[vx, vy, vz]:
                continue
            v = (vx * ny + vy) * nz + vz
            if closed[v]:
                continue
            nd = gcost[u] + costs[k]
            if nd < gcost[v]:
                gcost[v] = nd
                parent[v] = u
                f = nd
                if use_heuristic:
                    f += _octile(vx - g[0], vy - g[1], vz - g[2])
                if size >= cap:
                    hf = np.concatenate((hf, np.empty(cap)))
                    hn = np.concatenate((hn, np.empty(cap, dtype=np.int64)))
                    cap *= 2
                # push
                i = size
                hf[i] = f
                hn[i] = v
                size += 1
                while i > 0:
                    p = (i - 1) >> 1
                    if hf[p] < hf[i] or (hf[p] == hf[i] and hn[p] <= hn[i]):
                        break
                    hf[p], hf[i] = hf[i], hf[p]
                    hn[p], hn[i] = hn[i], hn[p]
                    i = p
    if not closed[goal]:
        return np.zeros((0, 3), dtype=np.int64), np.inf
    count = 1
    u = goal
    while u != start:
        u = parent[u]
        count += 1
    out = np.empty((count, 3), dtype=np.int64)
    u = goal
    for j in range(count - 1, -1, -1):
        out[j, 0] = u // (nz * ny)
        out[j, 1] = (u // nz) % ny
        out[j, 2] = u % nz
        if j > 0:
            u = parent[u]
    return out, gcost[goal]


def _nearest_free(grid: VoxelGrid3D, idx, max_ring: int = 3):
    if grid.in_bounds(idx) and not grid.occupancy[idx]:
        return idx
    best = None
    for r in range(1, max_ring + 1):
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                for dz in range(-r, r + 1):
                    if max(abs(dx), abs(dy), abs(dz)) != r:
                        continue
                    c = (idx[0] + dx, idx[1] + dy, idx[2] + dz)
                    if grid.in_bounds(c) and not grid.occupancy[c]:
                        key = (dx * dx + dy * dy + dz * dz, c)
                        if best is None or key < best:
                            best = key
        if best is not None:
            return best[1]
    return None


def astar_26(grid: VoxelGrid3D, start, goal, heuristic: bool = True) -> Optional[Path]:
    """Shortest 26-connected voxel path. Waypoints are the terminals joined
    through the voxel centers; the length counts the connectors too."""
    s = _nearest_free(grid, grid.index_of(start))
    g = _nearest_free(grid, grid.index_of(goal))
    if s is None or g is None:
        return None
    cells, _ = _astar(grid.occupancy, np.array(s, dtype=np.int64), np.array(g, dtype=np.int64), heuristic)
    if len(cells) == 0:
        return None
    pts = [tuple(float(c) for c in start)] + [grid.center(c) for c in cells] + [tuple(float(c) for c in goal)]
    return Path(_drop_collinear3(pts))


def _drop_collinear3(pts: list) -> list:
    """Merge straight runs of voxel steps (length is unchanged)."""
    # a terminal sitting on its voxel center repeats a point
    pts = [p for k, p in enumerate(pts) if k == 0 or p != pts[k - 1]]
    if len(pts) <= 2:
        return pts
    out = [pts[0]]
    for k in range(1, len(pts) - 1):
        a = np.subtract(pts[k], out[-1])
        b = np.subtract(pts[k + 1], pts[k])
        if np.linalg.norm(np.cross(a, b)) <= 1e-12 * max(1.0, np.linalg.norm(a) * np.linalg.norm(b)) and a @ b > 0:
            continue
        out.append(pts[k])
    out.append(pts[-1])
    return out


def grid_dijkstra_length(grid: VoxelGrid3D, start_idx, goal_idx) -> float:
    """Plain Dijkstra on the same voxel lattice, in meters (test oracle for A*)."""
    _, cost = _astar(grid.occupancy, np.array(start_idx, dtype=np.int64),
                     np.array(goal_idx, dtype=np.int64), False)
    return float(cost) * grid.resolution


# ------------------------------------------------------------- exhaustive graph

def exhaustive_vgraph(pmap: PolyhedralMap) -> VisibilityGraph:
    """Every mutually visible pair of map vertices joined by an edge."""
    graph = VisibilityGraph(pmap.vertices)
    vs = pmap.vertices
    if len(vs) < 2:
        return graph
    ii, jj = np.triu_indices(len(vs), 1)
    pos = np.array([v.position for v in vs])
    ok = pmap.compiled.visible_pairs(pos[ii], pos[jj])
    vertical = {tuple(sorted(e)) for e in pmap.vertical_edges}
    for i, j, good in zip(ii.tolist(), jj.tolist(), ok):
        if not good:
            continue
        a, b = vs[i], vs[j]
        if (a.id, b.id) in vertical:
            kind = VERTICAL_CONTOUR
        elif a.layer == b.layer:
            kind = SAME_LAYER
        else:
            kind = INTER_LAYER
        graph.add_edge(a.id, b.id, kind)
    return graph


# ------------------------------------------------------------- true obstacles

def solid_clearance_violations(points: Sequence, obstacles, clearance: float,
                               step: float = 0.01) -> list[int]:
    """Segments of a polyline passing closer than ``clearance`` (xy) to an
    extruded obstacle while inside its z-range.

    ``obstacles``: objects with ``footprint`` (polygon with ``vertices``),
    ``z_min`` and ``z_max``.
    """
    bad = []
    for i, (a, b) in enumerate(zip(points, points[1:])):
        pts = sample_segment(a, b, step)
        for ob in obstacles:
            sel = (pts[:, 2] >= ob.z_min) & (pts[:, 2] <= ob.z_max)
            if not sel.any():
                continue
            xy = pts[sel, :2]
            v = ob.footprint.vertices
            near = points_in_polygon(xy, v) | (distance_to_boundary(xy, v) < clearance - 1e-9)
            if near.any():
                bad.append(i)
                break
    return bad

"""Point cloud -> layered polygon map -> polyhedral map.

Pipeline per slab: rasterize points into an occupancy grid, dilate by the
robot radius, trace the outer boundary of every occupied component along
cell edges, and simplify it with Douglas-Peucker. Adjacent layers are then
linked by k-nearest-neighbour "vertical contour" edges.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from visnav.config import NavConfig
from visnav.geometry import CompiledLayers, LayerSlab, Polygon2D, polygon_is_simple

# vertex origins
EXTRACTED = "extracted"
SAMPLED = "sampled"


@dataclass(frozen=True)
class GraphVertex:
    id: int
    position: tuple[float, float, float]
    layer: int
    polygon_id: Optional[int] = None
    origin: str = EXTRACTED


@dataclass
class OccupancyGrid2D:
    """Boolean raster; ``cells[iy, ix]`` covers
    [origin_x + ix*res, origin_x + (ix+1)*res) x [origin_y + iy*res, ...)."""

    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray

    def __post_init__(self) -> None:
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        self.cells = np.asarray(self.cells, dtype=bool)
        if self.cells.ndim != 2 or min(self.cells.shape) < 1:
            raise ValueError("grid needs at least one cell")

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def index_origin(self) -> tuple[int, int]:
        # origins are kept on the resolution lattice
        return (int(round(self.origin[0] / self.resolution)), int(round(self.origin[1] / self.resolution)))

    def cell_centers(self) -> np.ndarray:
        iy, ix = np.nonzero(self.cells)
        return np.column_stack([
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        ])

    def padded(self, n: int) -> "OccupancyGrid2D":
        if n <= 0:
            return self
        r = self.resolution
        gx, gy = self.index_origin
        return OccupancyGrid2D(r, ((gx - n) * r, (gy - n) * r), np.pad(self.cells, n))


@dataclass
class LayeredPolygonMap:
    slabs: list[LayerSlab]
    polygons_per_layer: list[list[Polygon2D]]
    resolution: float
    inflation_radius: float

    def __post_init__(self) -> None:
        if len(self.slabs) != len(self.polygons_per_layer):
            raise ValueError("one polygon list per slab required")
        for prev, nxt in zip(self.slabs, self.slabs[1:]):
            if nxt.index != prev.index + 1 or abs(nxt.z_min - prev.z_max) > 1e-9:
                raise ValueError("slabs must be contiguous and ascending")

    @cached_property
    def compiled(self) -> CompiledLayers:
        return CompiledLayers(self.slabs, self.polygons_per_layer)

    @property
    def n_polygons(self) -> int:
        return sum(len(p) for p in self.polygons_per_layer)

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        for slab, polys in zip(self.slabs, self.polygons_per_layer):
            h.update(np.array([slab.z_min, slab.z_max]).tobytes())
            for poly in polys:
                h.update(poly.vertices.tobytes())
            h.update(b"|")
        return h.hexdigest()


@dataclass
class PolyhedralMap:
    base: LayeredPolygonMap
    vertices: list[GraphVertex]
    vertical_edges: list[tuple[int, int]]
    top_layer_marks: dict[int, bool] = field(default_factory=dict)

    @property
    def compiled(self) -> CompiledLayers:
        return self.base.compiled

    @property
    def slabs(self) -> list[LayerSlab]:
        return self.base.slabs

    @cached_property
    def vertex_by_id(self) -> dict[int, GraphVertex]:
        return {v.id: v for v in self.vertices}

    @cached_property
    def vertical_neighbors(self) -> dict[int, list[int]]:
        nbrs: dict[int, list[int]] = {v.id: [] for v in self.vertices}
        for a, b in self.vertical_edges:
            nbrs[a].append(b)
            nbrs[b].append(a)
        for lst in nbrs.values():
            lst.sort()
        return nbrs

    def top_polygons(self) -> list[tuple[int, int]]:
        """(layer, polygon index) of contours carrying at least one top-marked vertex."""
        out = set()
        for v in self.vertices:
            if self.top_layer_marks.get(v.id, False) and v.polygon_id is not None:
                out.add((v.layer, v.polygon_id))
        return sorted(out)

    def fingerprint(self) -> str:
        return self.base.fingerprint()


def _lattice_index(values: np.ndarray, resolution: float) -> np.ndarray:
    # small nudge keeps points sitting on a cell face in a stable cell
    return np.floor(values / resolution + 1e-9).astype(np.int64)


def slice_cloud(points, slabs: Sequence[LayerSlab], resolution: float,
                margin: int = 0) -> list[OccupancyGrid2D]:
    """One occupancy grid per slab, all sharing the xy extent of the cloud.

    ``margin`` pads the extent by that many free cells on every side.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        cells = np.zeros((1 + 2 * margin, 1 + 2 * margin), dtype=bool)
        origin = (-margin * resolution, -margin * resolution)
        return [OccupancyGrid2D(resolution, origin, cells.copy()) for _ in slabs]
    ix = _lattice_index(pts[:, 0], resolution)
    iy = _lattice_index(pts[:, 1], resolution)
    gx0, gy0 = int(ix.min()) - margin, int(iy.min()) - margin
    w = int(ix.max()) + margin - gx0 + 1
    h = int(iy.max()) + margin - gy0 + 1
    grids = []
    for slab in slabs:
        sel = (pts[:, 2] >= slab.z_min) & (pts[:, 2] <= slab.z_max)
        cells = np.zeros((h, w), dtype=bool)
        cells[iy[sel] - gy0, ix[sel] - gx0] = True
        grids.append(OccupancyGrid2D(resolution, (gx0 * resolution, gy0 * resolution), cells))
    return grids


def inflate(grid: OccupancyGrid2D, radius: float) -> OccupancyGrid2D:
    """Dilate by a disc: a cell becomes occupied when its center lies within
    ``radius`` of an occupied cell center. The grid extent is unchanged."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    cells = grid.cells
    if radius == 0 or not cells.any() or cells.all():
        return OccupancyGrid2D(grid.resolution, grid.origin, cells.copy())
    dist = ndimage.distance_transform_edt(~cells)
    out = dist * grid.resolution <= radius + 1e-9
    return OccupancyGrid2D(grid.resolution, grid.origin, out)


def _bridge_diagonals(cells: np.ndarray) -> np.ndarray:
    """Fill one free cell wherever two occupied cells touch only at a corner,
    so every component boundary is a simple closed curve."""
    cells = cells.copy()
    while True:
        a = cells[:-1, :-1]
        b = cells[:-1, 1:]
        c = cells[1:, :-1]
        d = cells[1:, 1:]
        main = a & d & ~b & ~c
        anti = b & c & ~a & ~d
        if not (main.any() or anti.any()):
            return cells
        iy, ix = np.nonzero(main)
        cells[iy, ix + 1] = True
        iy, ix = np.nonzero(anti)
        cells[iy, ix] = True


def _trace_boundaries(cells: np.ndarray) -> list[np.ndarray]:
    """Closed CCW loops of lattice corners (ix, iy) around occupied regions.

    Expects hole-free regions without diagonal-only contacts, so every
    lattice corner has at most one outgoing boundary edge.
    """
    h, w = cells.shape
    padded = np.pad(cells, 1)
    occ = padded[1:-1, 1:-1]
    below = ~padded[:-2, 1:-1] & occ
    above = ~padded[2:, 1:-1] & occ
    left = ~padded[1:-1, :-2] & occ
    right = ~padded[1:-1, 2:] & occ
    stride = w + 1

    def key(x, y):
        return y * stride + x

    starts, ends = [], []
    iy, ix = np.nonzero(below)
    starts.append(key(ix, iy)); ends.append(key(ix + 1, iy))
    iy, ix = np.nonzero(right)
    starts.append(key(ix + 1, iy)); ends.append(key(ix + 1, iy + 1))
    iy, ix = np.nonzero(above)
    starts.append(key(ix + 1, iy + 1)); ends.append(key(ix, iy + 1))
    iy, ix = np.nonzero(left)
    starts.append(key(ix, iy + 1)); ends.append(key(ix, iy))
    starts = np.concatenate(starts)
    ends = np.concatenate(ends)
    if len(starts) == 0:
        return []
    nxt = np.full((w + 1) * (h + 1), -1, dtype=np.int64)
    nxt[starts] = ends
    seen = np.zeros_like(nxt, dtype=bool)
    loops = []
    for s in np.sort(starts):
        if seen[s]:
            continue
        loop = []
        k = int(s)
        while not seen[k]:
            seen[k] = True
            loop.append(k)
            k = int(nxt[k])
        pts = np.array([(q % stride, q // stride) for q in loop], dtype=np.int64)
        loops.append(pts)
    return loops


def _drop_collinear(pts: np.ndarray) -> np.ndarray:
    prev = np.roll(pts, 1, axis=0)
    nxt = np.roll(pts, -1, axis=0)
    cross = (pts[:, 0] - prev[:, 0]) * (nxt[:, 1] - pts[:, 1]) - (pts[:, 1] - prev[:, 1]) * (nxt[:, 0] - pts[:, 0])
    return pts[cross != 0]


def extract_contours(grid: OccupancyGrid2D) -> list[Polygon2D]:
    """Outer boundary polygon of each 8-connected occupied component.

    Vertices sit on the outer cell edges in world coordinates, CCW; holes
    are filled, not reported.
    """
    if not grid.cells.any():
        return []
    cells = ndimage.binary_fill_holes(grid.cells)
    cells = _bridge_diagonals(cells)
    cells = ndimage.binary_fill_holes(cells)
    r = grid.resolution
    gx, gy = grid.index_origin
    polys = []
    for loop in _trace_boundaries(cells):
        corners = _drop_collinear(loop)
        world = np.column_stack([(gx + corners[:, 0]) * r, (gy + corners[:, 1]) * r])
        polys.append(Polygon2D(world, validate=False))
    return polys


def _point_line_dist(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    l2 = float(ab @ ab)
    if l2 == 0.0:
        return np.hypot(*(pts - a).T)
    t = np.clip((pts - a) @ ab / l2, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(pts - proj).T)


def _douglas_peucker(pts: np.ndarray, epsilon: float) -> np.ndarray:
    """Indices kept from an open polyline (both ends always kept)."""
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        d = _point_line_dist(pts[i + 1:j], pts[i], pts[j])
        k = int(np.argmax(d))
        if d[k] > epsilon:
            m = i + 1 + k
            keep[m] = True
            stack.append((i, m))
            stack.append((m, j))
    return np.nonzero(keep)[0]


def _dp_closed(v: np.ndarray, epsilon: float) -> np.ndarray:
    """Kept vertex indices, anchored at vertex 0 and the vertex farthest from it."""
    far = int(np.argmax(np.hypot(*(v - v[0]).T)))
    if far == 0:
        return np.zeros(1, dtype=np.int64)
    first = _douglas_peucker(v[: far + 1], epsilon)
    second = _douglas_peucker(np.vstack([v[far:], v[:1]]), epsilon) + far
    return np.concatenate([first, second[1:-1]])


def _restore_outward(v: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Re-insert dropped vertices lying outside (right of) their CCW chord
    until the simplified ring contains every input vertex."""
    keep = set(int(i) for i in keep)
    n = len(v)
    while True:
        ring = sorted(keep)
        added = False
        for a, b in zip(ring, ring[1:] + [ring[0] + n]):
            between = np.arange(a + 1, b) % n
            if len(between) == 0:
                continue
            pa, pb = v[a % n], v[b % n]
            ex, ey = pb - pa
            w = v[between] - pa
            side = (ex * w[:, 1] - ey * w[:, 0]) / max(math.hypot(ex, ey), 1e-12)
            k = int(np.argmin(side))
            if side[k] < -1e-9:
                keep.add(int(between[k]))
                added = True
        if not added:
            return np.array(sorted(keep), dtype=np.int64)


def simplify_polygon(poly: Polygon2D, epsilon: float, outward_only: bool = False) -> Polygon2D:
    """Douglas-Peucker on the closed ring; stays simple and keeps >= 3 vertices.

    With ``outward_only`` no input vertex may fall outside the result, so the
    simplified polygon never shrinks the region it traces (chords may only
    bridge concavities).
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    v = poly.vertices
    if epsilon == 0 or len(v) <= 3:
        return poly
    eps = epsilon
    while eps > 1e-9:
        keep = _dp_closed(v, eps)
        if outward_only:
            keep = _restore_outward(v, keep) if len(keep) >= 2 else keep
        out = v[keep] if len(keep) >= 3 else _minimal_triangle(v)
        if polygon_is_simple(out) and abs(Polygon2D(out, validate=False).area) > 0:
            return Polygon2D(out, validate=False)
        eps *= 0.5
    return poly


def _minimal_triangle(v: np.ndarray) -> np.ndarray:
    far = int(np.argmax(np.hypot(*(v - v[0]).T)))
    d = _point_line_dist(v, v[0], v[far])
    third = int(np.argmax(d))
    idx = sorted({0, far, third})
    return v[idx]


def connect_vertical_contours(layered: LayeredPolygonMap, k: int, radius: float) -> PolyhedralMap:
    """Build map vertices from polygon corners and link each to its <= k
    nearest corners in the layer directly above, within ``radius`` (xy)."""
    if k < 1 or not radius > 0:
        raise ValueError("k must be >= 1 and radius positive")
    vertices: list[GraphVertex] = []
    per_layer: list[list[GraphVertex]] = []
    next_id = 0
    for slab, polys in zip(layered.slabs, layered.polygons_per_layer):
        layer_vs = []
        for pid, poly in enumerate(polys):
            for x, y in poly.vertices:
                gv = GraphVertex(next_id, (float(x), float(y), slab.z_mid), slab.index, pid, EXTRACTED)
                next_id += 1
                layer_vs.append(gv)
        vertices.extend(layer_vs)
        per_layer.append(layer_vs)

    edges: list[tuple[int, int]] = []
    has_up = set()
    for lower, upper in zip(per_layer, per_layer[1:]):
        if not lower or not upper:
            continue
        up_xy = np.array([v.position[:2] for v in upper])
        tree = cKDTree(up_xy)
        low_xy = np.array([v.position[:2] for v in lower])
        for v, xy, hits in zip(lower, low_xy, tree.query_ball_point(low_xy, radius + 1e-9)):
            if not hits:
                continue
            d = np.hypot(*(up_xy[hits] - xy).T)
            order = sorted(range(len(hits)), key=lambda j: (d[j], upper[hits[j]].id))[:k]
            for j in order:
                edges.append((v.id, upper[hits[j]].id))
            has_up.add(v.id)
    marks = {v.id: v.id not in has_up for v in vertices}
    return PolyhedralMap(layered, vertices, edges, marks)


def layered_map_from_grids(grids: Sequence[OccupancyGrid2D], slabs: Sequence[LayerSlab],
                           config: NavConfig) -> LayeredPolygonMap:
    polys_per_layer = []
    pad = int(math.ceil(config.inflation_radius / config.resolution)) + 2
    for grid in grids:
        inflated = inflate(grid.padded(pad), config.inflation_radius)
        polys = [simplify_polygon(p, config.epsilon, outward_only=True) for p in extract_contours(inflated)]
        polys_per_layer.append(polys)
    return LayeredPolygonMap(list(slabs), polys_per_layer, config.resolution, config.inflation_radius)


def polyhedral_map_from_grids(grids, slabs, config: NavConfig) -> PolyhedralMap:
    layered = layered_map_from_grids(grids, slabs, config)
    return connect_vertical_contours(layered, config.knn_k, config.knn_search_radius)


def build_polyhedral_map(points, config: NavConfig) -> PolyhedralMap:
    """slice -> inflate -> extract -> simplify -> connect, deterministic."""
    slabs = config.slabs()
    grids = slice_cloud(points, slabs, config.resolution)
    return polyhedral_map_from_grids(grids, slabs, config)


def empty_map(config: NavConfig) -> PolyhedralMap:
    slabs = config.slabs()
    layered = LayeredPolygonMap(slabs, [[] for _ in slabs], config.resolution, config.inflation_radius)
    return PolyhedralMap(layered, [], [], {})

"""Geometric primitives: polygons, slabs, segment clipping and layered visibility."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from visnav import _kernels

TOL = _kernels.TOL


class Point3(NamedTuple):
    x: float
    y: float
    z: float


class Segment3(NamedTuple):
    a: Point3
    b: Point3


def as_point3(p) -> Point3:
    x, y, z = (float(c) for c in p)
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise ValueError(f"non-finite point {p!r}")
    return Point3(x, y, z)


@dataclass(frozen=True)
class LayerSlab:
    index: int
    z_min: float
    z_max: float

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("slab index must be >= 0")
        if not self.z_min < self.z_max:
            raise ValueError(f"slab {self.index}: z_min must be below z_max")

    @property
    def z_mid(self) -> float:
        return 0.5 * (self.z_min + self.z_max)

    def contains(self, z: float) -> bool:
        return self.z_min <= z <= self.z_max


def _segments_touch(p, r, q, s) -> np.ndarray:
    """Vectorized closed segment-segment intersection test (p-r vs q-s)."""
    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    def on_seg(a, b, c):
        return (
            (np.minimum(a[..., 0], b[..., 0]) - TOL <= c[..., 0]) & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]) + TOL)
            & (np.minimum(a[..., 1], b[..., 1]) - TOL <= c[..., 1]) & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1]) + TOL)
        )

    d1 = orient(q, s, p)
    d2 = orient(q, s, r)
    d3 = orient(p, r, q)
    d4 = orient(p, r, s)
    z1, z2, z3, z4 = (np.abs(d) <= TOL for d in (d1, d2, d3, d4))
    proper = (((d1 > TOL) & (d2 < -TOL)) | ((d1 < -TOL) & (d2 > TOL))) & (
        ((d3 > TOL) & (d4 < -TOL)) | ((d3 < -TOL) & (d4 > TOL))
    )
    return (
        proper
        | (z1 & on_seg(q, s, p))
        | (z2 & on_seg(q, s, r))
        | (z3 & on_seg(p, r, q))
        | (z4 & on_seg(p, r, s))
    )


def polygon_is_simple(vertices: np.ndarray) -> bool:
    v = np.asarray(vertices, dtype=float)
    k = len(v)
    if k < 3:
        return False
    a = v
    b = np.roll(v, -1, axis=0)
    i, j = np.triu_indices(k, 1)
    # adjacent edges share a vertex by construction
    adjacent = (j == i + 1) | ((i == 0) & (j == k - 1))
    i, j = i[~adjacent], j[~adjacent]
    if len(i) == 0:
        return True
    return not bool(_segments_touch(a[i], b[i], a[j], b[j]).any())


def signed_area(vertices: np.ndarray) -> float:
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


class Polygon2D:
    """Simple polygon, stored counter-clockwise as a read-only (k, 2) array."""

    __slots__ = ("vertices", "_bbox")

    def __init__(self, vertices, validate: bool = True):
        v = np.array(vertices, dtype=float).reshape(-1, 2)
        if validate:
            if len(v) < 3:
                raise ValueError("polygon needs at least 3 vertices")
            if not np.all(np.isfinite(v)):
                raise ValueError("polygon vertices must be finite")
            if np.any(np.all(np.abs(v - np.roll(v, -1, axis=0)) <= TOL, axis=1)):
                raise ValueError("polygon has repeated consecutive vertices")
            if not polygon_is_simple(v):
                raise ValueError("polygon is not simple")
        if signed_area(v) < 0:
            v = v[::-1].copy()
        v.setflags(write=False)
        self.vertices = v
        self._bbox = (float(v[:, 0].min()), float(v[:, 1].min()), float(v[:, 0].max()), float(v[:, 1].max()))

    def __len__(self) -> int:
        return len(self.vertices)

    def __repr__(self) -> str:
        return f"Polygon2D({self.vertices.tolist()!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Polygon2D) and np.array_equal(self.vertices, other.vertices)

    def __hash__(self) -> int:
        return hash(self.vertices.tobytes())

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return self._bbox

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices, np.roll(self.vertices, -1, axis=0)


def _point_segment_dist(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    l2 = np.einsum("ij,ij->i", ab, ab)
    t = np.where(l2 > 0, np.einsum("ij,ij->i", p - a, ab) / np.where(l2 > 0, l2, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    c = a + t[:, None] * ab
    return np.hypot(*(p - c).T)


def point_in_polygon(p, poly: Polygon2D) -> bool:
    """Closed containment: boundary points count as inside."""
    x, y = float(p[0]), float(p[1])
    xmin, ymin, xmax, ymax = poly.bbox
    if x < xmin - TOL or x > xmax + TOL or y < ymin - TOL or y > ymax + TOL:
        return False
    a, b = poly.edges()
    if _point_segment_dist(np.array([[x, y]]), a, b).min() <= TOL:
        return True
    y0, y1 = a[:, 1], b[:, 1]
    crosses = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = a[:, 0] + (y - y0) * (b[:, 0] - a[:, 0]) / (y1 - y0)
    return bool(np.count_nonzero(crosses & (x < xi)) % 2)


def segment_polygon_intersections(seg, poly: Polygon2D) -> list[tuple[float, float]]:
    """Points where a 2D segment meets the polygon boundary, ordered along the segment.

    Collinear overlaps contribute the overlap's end points.
    """
    p = np.asarray(seg[0], dtype=float)[:2]
    r = np.asarray(seg[1], dtype=float)[:2]
    d = r - p
    q, s = poly.edges()
    e = s - q
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    qp = q - p
    params: list[float] = []
    dlen = math.hypot(*d)
    if dlen <= TOL:
        if point_in_polygon(p, poly) and _point_segment_dist(p[None, :], q, s).min() <= TOL:
            return [(float(p[0]), float(p[1]))]
        return []
    elen = np.hypot(e[:, 0], e[:, 1])
    parallel = np.abs(denom) <= TOL * dlen * elen
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[:, 0] * e[:, 1] - qp[:, 1] * e[:, 0]) / denom
        u = (qp[:, 0] * d[1] - qp[:, 1] * d[0]) / denom
    t_slack = TOL / dlen
    u_slack = TOL / elen
    hit = ~parallel & (t >= -t_slack) & (t <= 1 + t_slack) & (u >= -u_slack) & (u <= 1 + u_slack)
    params.extend(np.clip(t[hit], 0.0, 1.0).tolist())
    for k in np.nonzero(parallel)[0]:
        # collinear only if q lies on the segment's line
        if abs(d[0] * qp[k, 1] - d[1] * qp[k, 0]) / dlen > TOL:
            continue
        tq = float(np.dot(q[k] - p, d)) / dlen**2
        ts = float(np.dot(s[k] - p, d)) / dlen**2
        lo, hi = max(min(tq, ts), 0.0), min(max(tq, ts), 1.0)
        if lo <= hi + t_slack:
            params.extend([lo, hi])
    params.sort()
    out: list[tuple[float, float]] = []
    for tt in params:
        pt = p + tt * d
        if out and math.hypot(pt[0] - out[-1][0], pt[1] - out[-1][1]) <= TOL:
            continue
        out.append((float(pt[0]), float(pt[1])))
    return out


def clip_segment_to_slab(seg: Segment3, slab: LayerSlab) -> Optional[Segment3]:
    a, b = seg
    az, bz = a[2], b[2]
    if max(az, bz) < slab.z_min or min(az, bz) > slab.z_max:
        return None
    dz = bz - az
    if dz == 0.0:
        return Segment3(Point3(*a), Point3(*b))
    t0 = (slab.z_min - az) / dz
    t1 = (slab.z_max - az) / dz
    lo, hi = max(0.0, min(t0, t1)), min(1.0, max(t0, t1))

    def at(t: float) -> Point3:
        if t == 0.0:
            return Point3(*a)
        if t == 1.0:
            return Point3(*b)
        return Point3(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), az + t * dz)

    pa, pb = at(lo), at(hi)
    # snap the clipped ends exactly onto the slab planes
    if 0.0 < lo:
        pa = pa._replace(z=slab.z_min if dz > 0 else slab.z_max)
    if hi < 1.0:
        pb = pb._replace(z=slab.z_max if dz > 0 else slab.z_min)
    return Segment3(pa, pb)


def _bucket(cx0, cx1, cy0, cy1, nx, owner_ids):
    """Expand per-item cell rectangles into flat (cell, owner) pairs."""
    nxs = cx1 - cx0 + 1
    cnt = nxs * (cy1 - cy0 + 1)
    first = np.cumsum(cnt) - cnt
    owners = np.repeat(owner_ids, cnt)
    local = np.arange(int(cnt.sum()), dtype=np.int64) - np.repeat(first, cnt)
    rep_nx = np.repeat(nxs, cnt)
    cells = (np.repeat(cy0, cnt) + local // rep_nx) * nx + np.repeat(cx0, cnt) + local % rep_nx
    return cells, owners


class CompiledLayers:
    """Flat-array form of a layered polygon map for the compiled kernels."""

    def __init__(self, slabs: Sequence[LayerSlab], polygons_per_layer: Sequence[Sequence[Polygon2D]]):
        if len(slabs) != len(polygons_per_layer):
            raise ValueError("one polygon list per slab required")
        self.slabs_list = list(slabs)
        n_layers = len(slabs)
        self.slabs = np.array([[s.z_min, s.z_max] for s in slabs], dtype=float).reshape(n_layers, 2)
        edge_rows, poly_bbox, poly_edges = [], [], []
        poly_off = [0]
        edge_off = [0]
        n_edges = 0
        for polys in polygons_per_layer:
            for poly in polys:
                v = poly.vertices
                nxt = np.roll(v, -1, axis=0)
                prv = np.roll(v, 1, axis=0)
                edge_rows.append(np.hstack([v, nxt, prv]))
                poly_bbox.append(poly.bbox)
                poly_edges.append((n_edges, n_edges + len(v)))
                n_edges += len(v)
            poly_off.append(len(poly_bbox))
            edge_off.append(n_edges)
        self.edges = np.vstack(edge_rows) if edge_rows else np.zeros((0, 6))
        self.poly_bbox = np.array(poly_bbox, dtype=float).reshape(-1, 4)
        self.poly_edges = np.array(poly_edges, dtype=np.int64).reshape(-1, 2)
        self.poly_off = np.array(poly_off, dtype=np.int64)
        self.edge_off = np.array(edge_off, dtype=np.int64)
        self._build_grids()

    def _build_grids(self) -> None:
        n_layers = len(self.slabs_list)
        grid_f = np.zeros((n_layers, 3))
        grid_i = np.zeros((n_layers, 3), dtype=np.int64)
        starts, items = [np.zeros(1, dtype=np.int64)], []
        pstarts, pitems = [np.zeros(1, dtype=np.int64)], []
        base = 0
        total = 0
        ptotal = 0
        pad = 1e-6
        for li in range(n_layers):
            e0, e1 = self.edge_off[li], self.edge_off[li + 1]
            ne = e1 - e0
            grid_i[li, 2] = base
            if ne == 0:
                grid_f[li] = (0.0, 0.0, 1.0)
                continue
            ed = self.edges[e0:e1]
            xmin = min(ed[:, 0].min(), ed[:, 2].min()) - 2 * pad
            ymin = min(ed[:, 1].min(), ed[:, 3].min()) - 2 * pad
            xmax = max(ed[:, 0].max(), ed[:, 2].max()) + 2 * pad
            ymax = max(ed[:, 1].max(), ed[:, 3].max()) + 2 * pad
            w, h = xmax - xmin, ymax - ymin
            cs = max(math.sqrt(w * h / ne), 1e-3, max(w, h) / 4096.0)
            nx = max(1, int(math.ceil(w / cs)))
            ny = max(1, int(math.ceil(h / cs)))
            grid_f[li] = (xmin, ymin, cs)
            grid_i[li, 0], grid_i[li, 1] = nx, ny
            bx0 = np.minimum(ed[:, 0], ed[:, 2]) - pad
            bx1 = np.maximum(ed[:, 0], ed[:, 2]) + pad
            by0 = np.minimum(ed[:, 1], ed[:, 3]) - pad
            by1 = np.maximum(ed[:, 1], ed[:, 3]) + pad
            cx0 = np.clip(np.floor((bx0 - xmin) / cs).astype(np.int64), 0, nx - 1)
            cx1 = np.clip(np.floor((bx1 - xmin) / cs).astype(np.int64), 0, nx - 1)
            cy0 = np.clip(np.floor((by0 - ymin) / cs).astype(np.int64), 0, ny - 1)
            cy1 = np.clip(np.floor((by1 - ymin) / cs).astype(np.int64), 0, ny - 1)
            cells, owners = _bucket(cx0, cx1, cy0, cy1, nx, np.arange(e0, e1, dtype=np.int64))
            order = np.argsort(cells, kind="stable")
            counts = np.bincount(cells, minlength=nx * ny)
            starts.append(total + np.cumsum(counts))
            items.append(owners[order])
            total += len(cells)

            p0, p1 = self.poly_off[li], self.poly_off[li + 1]
            pb = self.poly_bbox[p0:p1]
            cx0 = np.clip(np.floor((pb[:, 0] - pad - xmin) / cs).astype(np.int64), 0, nx - 1)
            cx1 = np.clip(np.floor((pb[:, 2] + pad - xmin) / cs).astype(np.int64), 0, nx - 1)
            cy0 = np.clip(np.floor((pb[:, 1] - pad - ymin) / cs).astype(np.int64), 0, ny - 1)
            cy1 = np.clip(np.floor((pb[:, 3] + pad - ymin) / cs).astype(np.int64), 0, ny - 1)
            cells, owners = _bucket(cx0, cx1, cy0, cy1, nx, np.arange(p0, p1, dtype=np.int64))
            order = np.argsort(cells, kind="stable")
            counts = np.bincount(cells, minlength=nx * ny)
            pstarts.append(ptotal + np.cumsum(counts))
            pitems.append(owners[order])
            ptotal += len(cells)
            base += nx * ny
        self.grid_f = grid_f
        self.grid_i = grid_i
        self.cell_start = np.concatenate(starts).astype(np.int64)
        self.cell_items = np.concatenate(items).astype(np.int64) if items else np.zeros(0, dtype=np.int64)
        self.pcell_start = np.concatenate(pstarts).astype(np.int64)
        self.pcell_items = np.concatenate(pitems).astype(np.int64) if pitems else np.zeros(0, dtype=np.int64)

    @property
    def n_layers(self) -> int:
        return len(self.slabs_list)

    def _args(self):
        return (self.slabs, self.edges, self.poly_off, self.poly_bbox, self.poly_edges,
                self.grid_f, self.grid_i, self.cell_start, self.cell_items,
                self.pcell_start, self.pcell_items)

    def _layer_args(self):
        return (self.edges, self.poly_off, self.poly_bbox, self.poly_edges,
                self.grid_f, self.grid_i, self.cell_start, self.cell_items,
                self.pcell_start, self.pcell_items)

    def _point_args(self):
        return (self.grid_f, self.grid_i, self.pcell_start, self.pcell_items)

    def visible(self, a, b) -> bool:
        a = np.asarray(a, dtype=float).reshape(1, 3)
        b = np.asarray(b, dtype=float).reshape(1, 3)
        return bool(_kernels.visible_pairs(a, b, *self._args())[0])

    def visible_many(self, src, targets) -> np.ndarray:
        targets = np.ascontiguousarray(targets, dtype=float).reshape(-1, 3)
        if len(targets) == 0:
            return np.zeros(0, dtype=bool)
        return _kernels.visible_many(np.asarray(src, dtype=float).reshape(3), targets, *self._args())

    def visible_pairs(self, a, b) -> np.ndarray:
        a = np.ascontiguousarray(a, dtype=float).reshape(-1, 3)
        b = np.ascontiguousarray(b, dtype=float).reshape(-1, 3)
        if len(a) == 0:
            return np.zeros(0, dtype=bool)
        return _kernels.visible_pairs(a, b, *self._args())

    def strictly_inside(self, pts2d, layers) -> np.ndarray:
        pts2d = np.ascontiguousarray(pts2d, dtype=float).reshape(-1, 2)
        layers = np.ascontiguousarray(layers, dtype=np.int64).reshape(-1)
        return _kernels.strictly_inside_many(pts2d, layers, self.poly_off, self.poly_bbox,
                                             self.poly_edges, self.edges, *self._point_args())

    def layer_allpairs(self, layer: int, pts2d) -> np.ndarray:
        pts2d = np.ascontiguousarray(pts2d, dtype=float).reshape(-1, 2)
        inside = self.strictly_inside(pts2d, np.full(len(pts2d), layer))
        return _kernels.layer_allpairs(pts2d, inside, layer, *self._layer_args())

    def point_blocked(self, p) -> bool:
        return bool(_kernels.point_blocked(float(p[0]), float(p[1]), float(p[2]), self.slabs,
                                           self.poly_off, self.poly_bbox, self.poly_edges, self.edges,
                                           *self._point_args()))

    def slab_index(self, z: float) -> int:
        """Index of the slab containing z (lower one on shared faces), clamped to the stack."""
        if not self.slabs_list:
            return -1
        for s in self.slabs_list:
            if z <= s.z_max:
                return s.index
        return self.slabs_list[-1].index


def compiled_layers(map_like) -> CompiledLayers:
    if isinstance(map_like, CompiledLayers):
        return map_like
    compiled = getattr(map_like, "compiled", None)
    if compiled is None:
        raise TypeError(f"cannot derive layer data from {type(map_like).__name__}")
    return compiled


def check_visibility(seg, map_like) -> bool:
    """Layered visibility of a 3D segment against a polygon map.

    The segment is clipped to every slab it overlaps and the clipped part
    must not enter any polygon interior of that slab. End points resting on
    a contour do not block.
    """
    a, b = seg
    return compiled_layers(map_like).visible(a, b)

"""Compiled visibility kernels over layered polygon maps.

Layer data is packed into flat arrays (see ``geometry.CompiledLayers``):

    edges      (E, 6)  x0, y0, x1, y1, px, py   (px, py: vertex preceding x0, y0)
    edge_off   (L+1,)  per-layer slice into ``edges``
    poly_bbox  (P, 4)  xmin, ymin, xmax, ymax
    poly_edges (P, 2)  [start, stop) into ``edges``
    poly_off   (L+1,)  per-layer slice into ``poly_*``
    grid_f     (L, 3)  origin x, origin y, cell size
    grid_i     (L, 3)  nx, ny, base offset into ``cell_start``
    cell_start, cell_items: CSR buckets of edge indices per grid cell
    pcell_start, pcell_items: CSR buckets of polygon indices (by bbox) per grid cell
    slabs      (L, 2)  z_min, z_max

A segment is blocked by a polygon iff its relative interior meets the
polygon's open interior; running along or grazing the boundary is free.
"""
import math

import numpy as np
from numba import njit

TOL = 1e-9
ANG_TOL = 1e-10


@njit(cache=True, inline="always")
def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


@njit(cache=True)
def _enters_cone(wx, wy, px, py, qx, qy, dx, dy):
    # Does direction d leave vertex w into the interior of a CCW polygon?
    ix = wx - px
    iy = wy - py
    ox = qx - wx
    oy = qy - wy
    li = math.sqrt(ix * ix + iy * iy)
    lo = math.sqrt(ox * ox + oy * oy)
    ld = math.sqrt(dx * dx + dy * dy)
    if li == 0.0 or lo == 0.0 or ld == 0.0:
        return False
    c_in = _cross(ix, iy, dx, dy) / (li * ld)
    c_out = _cross(ox, oy, dx, dy) / (lo * ld)
    turn = _cross(ix, iy, ox, oy) / (li * lo)
    if turn > ANG_TOL:
        return c_in > ANG_TOL and c_out > ANG_TOL
    if turn < -ANG_TOL:
        return c_in > ANG_TOL or c_out > ANG_TOL
    return c_out > ANG_TOL


@njit(cache=True)
def _edge_blocks(ax, ay, bx, by, length, e, edges):
    dx = bx - ax
    dy = by - ay
    wx = edges[e, 0]
    wy = edges[e, 1]
    qx = edges[e, 2]
    qy = edges[e, 3]
    ex = qx - wx
    ey = qy - wy
    elen = math.sqrt(ex * ex + ey * ey)
    if elen == 0.0:
        return False
    dw = _cross(dx, dy, wx - ax, wy - ay) / length
    dq = _cross(dx, dy, qx - ax, qy - ay) / length
    # proper crossing
    if (dw > TOL and dq < -TOL) or (dw < -TOL and dq > TOL):
        da = _cross(ex, ey, ax - wx, ay - wy) / elen
        db = _cross(ex, ey, bx - wx, by - wy) / elen
        if (da > TOL and db < -TOL) or (da < -TOL and db > TOL):
            return True
    # start vertex of the edge lying on the closed segment
    if abs(dw) <= TOL:
        s = ((wx - ax) * dx + (wy - ay) * dy) / (length * length)
        slack = TOL / length
        if s >= -slack and s <= 1.0 + slack:
            px = edges[e, 4]
            py = edges[e, 5]
            if s < 1.0 - slack and _enters_cone(wx, wy, px, py, qx, qy, dx, dy):
                return True
            if s > slack and _enters_cone(wx, wy, px, py, qx, qy, -dx, -dy):
                return True
    # segment endpoints resting on the open edge
    eslack = TOL / elen
    da = _cross(ex, ey, ax - wx, ay - wy) / elen
    if abs(da) <= TOL:
        u = ((ax - wx) * ex + (ay - wy) * ey) / (elen * elen)
        if u > eslack and u < 1.0 - eslack:
            if _cross(ex, ey, dx, dy) / (elen * length) > ANG_TOL:
                return True
    db = _cross(ex, ey, bx - wx, by - wy) / elen
    if abs(db) <= TOL:
        u = ((bx - wx) * ex + (by - wy) * ey) / (elen * elen)
        if u > eslack and u < 1.0 - eslack:
            if _cross(ex, ey, -dx, -dy) / (elen * length) > ANG_TOL:
                return True
    return False


@njit(cache=True)
def _strictly_inside_poly(x, y, p, poly_bbox, poly_edges, edges):
    if (x < poly_bbox[p, 0] - TOL or x > poly_bbox[p, 2] + TOL
            or y < poly_bbox[p, 1] - TOL or y > poly_bbox[p, 3] + TOL):
        return False
    inside = False
    for e in range(poly_edges[p, 0], poly_edges[p, 1]):
        x0 = edges[e, 0]
        y0 = edges[e, 1]
        x1 = edges[e, 2]
        y1 = edges[e, 3]
        # distance to the edge: anything within TOL counts as boundary
        ex = x1 - x0
        ey = y1 - y0
        l2 = ex * ex + ey * ey
        t = 0.0
        if l2 > 0.0:
            t = ((x - x0) * ex + (y - y0) * ey) / l2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        cx = x0 + t * ex - x
        cy = y0 + t * ey - y
        if cx * cx + cy * cy <= TOL * TOL:
            return False
        if (y0 > y) != (y1 > y):
            xi = x0 + (y - y0) * ex / ey
            if x < xi:
                inside = not inside
    return inside


@njit(cache=True)
def _strictly_inside_layer(x, y, li, poly_off, poly_bbox, poly_edges, edges,
                           grid_f, grid_i, pcell_start, pcell_items):
    if poly_off[li] == poly_off[li + 1]:
        return False
    ox = grid_f[li, 0]
    oy = grid_f[li, 1]
    cs = grid_f[li, 2]
    nx = grid_i[li, 0]
    ny = grid_i[li, 1]
    ix = int(math.floor((x - ox) / cs))
    iy = int(math.floor((y - oy) / cs))
    if ix < 0 or iy < 0 or ix >= nx or iy >= ny:
        return False
    cell = grid_i[li, 2] + iy * nx + ix
    for k in range(pcell_start[cell], pcell_start[cell + 1]):
        if _strictly_inside_poly(x, y, pcell_items[k], poly_bbox, poly_edges, edges):
            return True
    return False


@njit(cache=True)
def _blocked2d(ax, ay, bx, by, li, a_inside, b_inside,
               edges, poly_off, poly_bbox, poly_edges,
               grid_f, grid_i, cell_start, cell_items, pcell_start, pcell_items):
    """True if the 2D segment a-b enters a polygon interior of layer ``li``.

    ``a_inside`` / ``b_inside``: 1 or 0 if the caller already knows whether
    the endpoint is strictly inside a polygon, -1 to compute it here.
    """
    if poly_off[li] == poly_off[li + 1]:
        return False
    dx = bx - ax
    dy = by - ay
    l2 = dx * dx + dy * dy
    if a_inside < 0:
        inside = _strictly_inside_layer(ax, ay, li, poly_off, poly_bbox, poly_edges, edges,
                                        grid_f, grid_i, pcell_start, pcell_items)
        a_inside = 1 if inside else 0
    if a_inside == 1:
        return True
    if l2 <= TOL * TOL:
        return False
    if b_inside < 0:
        inside = _strictly_inside_layer(bx, by, li, poly_off, poly_bbox, poly_edges, edges,
                                        grid_f, grid_i, pcell_start, pcell_items)
        b_inside = 1 if inside else 0
    if b_inside == 1:
        return True
    length = math.sqrt(l2)

    ox = grid_f[li, 0]
    oy = grid_f[li, 1]
    cs = grid_f[li, 2]
    nx = grid_i[li, 0]
    ny = grid_i[li, 1]
    base = grid_i[li, 2]
    # clip to the grid rectangle
    t0 = 0.0
    t1 = 1.0
    xmax = ox + nx * cs
    ymax = oy + ny * cs
    if dx == 0.0:
        if ax < ox or ax > xmax:
            return False
    else:
        ta = (ox - ax) / dx
        tb = (xmax - ax) / dx
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    if dy == 0.0:
        if ay < oy or ay > ymax:
            return False
    else:
        ta = (oy - ay) / dy
        tb = (ymax - ay) / dy
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    if t0 > t1:
        return False

    gx0 = (ax + t0 * dx - ox) / cs
    gy0 = (ay + t0 * dy - oy) / cs
    gx1 = (ax + t1 * dx - ox) / cs
    gy1 = (ay + t1 * dy - oy) / cs
    ix = min(max(int(math.floor(gx0)), 0), nx - 1)
    iy = min(max(int(math.floor(gy0)), 0), ny - 1)
    ix_end = min(max(int(math.floor(gx1)), 0), nx - 1)
    iy_end = min(max(int(math.floor(gy1)), 0), ny - 1)
    gdx = gx1 - gx0
    gdy = gy1 - gy0
    step_x = 1 if ix_end > ix else (-1 if ix_end < ix else 0)
    step_y = 1 if iy_end > iy else (-1 if iy_end < iy else 0)
    if step_x != 0 and gdx != 0.0:
        nxt = ix + 1 if step_x > 0 else ix
        tmax_x = (nxt - gx0) / gdx
        tdelta_x = abs(1.0 / gdx)
    else:
        tmax_x = np.inf
        tdelta_x = np.inf
    if step_y != 0 and gdy != 0.0:
        nxt = iy + 1 if step_y > 0 else iy
        tmax_y = (nxt - gy0) / gdy
        tdelta_y = abs(1.0 / gdy)
    else:
        tmax_y = np.inf
        tdelta_y = np.inf

    n_steps = abs(ix_end - ix) + abs(iy_end - iy)
    for _ in range(n_steps + 1):
        cell = base + iy * nx + ix
        for k in range(cell_start[cell], cell_start[cell + 1]):
            if _edge_blocks(ax, ay, bx, by, length, cell_items[k], edges):
                return True
        if ix == ix_end and iy == iy_end:
            break
        if iy == iy_end or (ix != ix_end and tmax_x <= tmax_y):
            ix += step_x
            tmax_x += tdelta_x
        else:
            iy += step_y
            tmax_y += tdelta_y
    return False


@njit(cache=True)
def _visible3d(ax, ay, az, bx, by, bz, a_inside, b_inside, a_layer, b_layer,
               slabs, edges, poly_off, poly_bbox, poly_edges,
               grid_f, grid_i, cell_start, cell_items, pcell_start, pcell_items):
    """Layered 3D visibility: every slab the segment overlaps is checked
    with the sub-segment clipped to that slab.

    Endpoint inside-flags are only trusted for the layer given alongside
    them (``a_layer`` / ``b_layer``, -1 for none).
    """
    dx = bx - ax
    dy = by - ay
    dz = bz - az
    if dx * dx + dy * dy + dz * dz <= TOL * TOL:
        return True
    zlo = min(az, bz)
    zhi = max(az, bz)
    n_layers = slabs.shape[0]
    for li in range(n_layers):
        s0 = slabs[li, 0]
        s1 = slabs[li, 1]
        if s1 < zlo or s0 > zhi:
            continue
        if poly_off[li] == poly_off[li + 1]:
            continue
        if abs(dz) <= TOL:
            t0 = 0.0
            t1 = 1.0
        else:
            ta = (s0 - az) / dz
            tb = (s1 - az) / dz
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(0.0, ta)
            t1 = min(1.0, tb)
            if t0 > t1:
                continue
        fa = -1
        fb = -1
        if t0 == 0.0 and li == a_layer:
            fa = a_inside
        if t1 == 1.0 and li == b_layer:
            fb = b_inside
        if _blocked2d(ax + t0 * dx, ay + t0 * dy, ax + t1 * dx, ay + t1 * dy, li, fa, fb,
                      edges, poly_off, poly_bbox, poly_edges,
                      grid_f, grid_i, cell_start, cell_items, pcell_start, pcell_items):
            return False
    return True


@njit(cache=True)
def visible_many(src, targets, slabs, edges, poly_off, poly_bbox, poly_edges,
                 grid_f, grid_i, cell_start, cell_items, pcell_start, pcell_items):
    out = np.empty(targets.shape[0], dtype=np.bool_)
    for i in range(targets.shape[0]):
        out[i] = _visible3d(src[0], src[1], src[2],
                            targets[i, 0], targets[i, 1], targets[i, 2],
                            -1, -1, -1, -1,
                            slabs, edges, poly_off, poly_bbox, poly_edges,
                            grid_f, grid_i, cell_start, cell_items, pcell_start, pcell_items)
    return out


@njit(cache=True)
def visible_pairs(a, b, slabs, edges, poly_off, poly_bbox, poly_edges,
                  grid_f, grid_i, cell_start, cell_items, pcell_start, pcell_items):
    out = np.empty(a.shape[0], dtype=np.bool_)
    for i in range(a.shape[0]):
        out[i] = _visible3d(a[i, 0], a[i, 1], a[i, 2], b[i, 0], b[i, 1], b[i, 2],
                            -1, -1, -1, -1,
                            slabs, edges, poly_off, poly_bbox, poly_edges,
                            grid_f, grid_i, cell_start, cell_items, pcell_start, pcell_items)
    return out


@njit(cache=True)
def layer_allpairs(pts, inside, li, edges, poly_off, poly_bbox, poly_edges,
                   grid_f, grid_i, cell_start, cell_items, pcell_start, pcell_items):
    """Symmetric same-layer visibility matrix for points of one layer."""
    n = pts.shape[0]
    out = np.zeros((n, n), dtype=np.bool_)
    for i in range(n):
        for j in range(i + 1, n):
            blocked = _blocked2d(pts[i, 0], pts[i, 1], pts[j, 0], pts[j, 1], li,
                                 inside[i], inside[j],
                                 edges, poly_off, poly_bbox, poly_edges,
                                 grid_f, grid_i, cell_start, cell_items, pcell_start, pcell_items)
            if not blocked:
                out[i, j] = True
                out[j, i] = True
    return out


@njit(cache=True)
def strictly_inside_many(pts, layers, poly_off, poly_bbox, poly_edges, edges,
                         grid_f, grid_i, pcell_start, pcell_items):
    out = np.zeros(pts.shape[0], dtype=np.int64)
    for i in range(pts.shape[0]):
        li = layers[i]
        if li < 0:
            continue
        if _strictly_inside_layer(pts[i, 0], pts[i, 1], li, poly_off, poly_bbox, poly_edges, edges,
                                  grid_f, grid_i, pcell_start, pcell_items):
            out[i] = 1
    return out


@njit(cache=True)
def point_blocked(x, y, z, slabs, poly_off, poly_bbox, poly_edges, edges,
                  grid_f, grid_i, pcell_start, pcell_items):
    """True if (x, y, z) is strictly inside a polygon of any slab containing z."""
    for li in range(slabs.shape[0]):
        if z < slabs[li, 0] or z > slabs[li, 1]:
            continue
        if _strictly_inside_layer(x, y, li, poly_off, poly_bbox, poly_edges, edges,
                                  grid_f, grid_i, pcell_start, pcell_items):
            return True
    return False

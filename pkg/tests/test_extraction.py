import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Point
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.ops import unary_union

from conftest import box_cloud, layered, slabs, square
from visnav.config import NavConfig
from visnav.extraction import (
    OccupancyGrid2D,
    build_polyhedral_map,
    connect_vertical_contours,
    extract_contours,
    inflate,
    simplify_polygon,
    slice_cloud,
)
from visnav.geometry import LayerSlab, Polygon2D


def _dist_to_polyline(pts, poly_vertices):
    v = np.asarray(poly_vertices)
    best = np.full(len(pts), np.inf)
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        ab = b - a
        t = np.clip(((pts - a) @ ab) / (ab @ ab), 0, 1)
        best = np.minimum(best, np.hypot(*(pts - (a + t[:, None] * ab)).T))
    return best


# ---------------------------------------------------------------- slicing

def test_slice_empty_cloud():
    grids = slice_cloud(np.zeros((0, 3)), slabs(3), 0.15)
    assert len(grids) == 3
    assert not any(g.cells.any() for g in grids)


def test_slice_single_point():
    grids = slice_cloud([(0.07, 0.07, 0.5)], [LayerSlab(0, 0.0, 1.0)], 0.15)
    assert grids[0].cells.sum() == 1
    iy, ix = np.nonzero(grids[0].cells)
    x0 = grids[0].origin[0] + ix[0] * 0.15
    y0 = grids[0].origin[1] + iy[0] * 0.15
    assert x0 <= 0.07 < x0 + 0.15 and y0 <= 0.07 < y0 + 0.15


def test_slice_box_matches_footprint():
    res = 0.15
    pts = box_cloud(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, step=0.04)
    grids = slice_cloud(pts, slabs(2, height=1.0), res)
    assert len(grids) == 2
    for g in grids:
        centers = g.cell_centers()
        # every occupied cell center lies within one cell of the analytic square
        assert centers.min() >= -res and centers.max() <= 2.0 + res
        # and the square is covered: every cell whose center is inside is occupied
        gx, gy = np.meshgrid(g.origin[0] + (np.arange(g.width) + 0.5) * res,
                             g.origin[1] + (np.arange(g.height) + 0.5) * res)
        inside = (gx > 0) & (gx < 2.0) & (gy > 0) & (gy < 2.0)
        assert g.cells[inside].all()


# ---------------------------------------------------------------- inflation

def test_inflate_radius_zero_is_identity():
    cells = np.zeros((5, 6), dtype=bool)
    cells[2, 3] = True
    g = OccupancyGrid2D(0.15, (0.0, 0.0), cells)
    assert np.array_equal(inflate(g, 0.0).cells, cells)


def test_inflate_single_cell_disc():
    res = 0.15
    cells = np.zeros((9, 9), dtype=bool)
    cells[4, 4] = True
    out = inflate(OccupancyGrid2D(res, (0.0, 0.0), cells), 2 * res)
    iy, ix = np.mgrid[0:9, 0:9]
    expected = np.hypot(ix - 4, iy - 4) * res <= 2 * res + 1e-9
    assert np.array_equal(out.cells, expected)
    assert out.cells.sum() == 13


def test_inflate_full_grid_unchanged():
    g = OccupancyGrid2D(0.15, (0.0, 0.0), np.ones((4, 4), dtype=bool))
    assert inflate(g, 0.45).cells.all()


# ---------------------------------------------------------------- contours

def test_extract_contours_empty():
    assert extract_contours(OccupancyGrid2D(0.15, (0.0, 0.0), np.zeros((4, 4), dtype=bool))) == []


def test_extract_contours_single_cell():
    cells = np.zeros((3, 3), dtype=bool)
    cells[1, 1] = True
    polys = extract_contours(OccupancyGrid2D(0.15, (0.0, 0.0), cells))
    assert len(polys) == 1
    assert len(polys[0]) == 4
    assert sorted(map(tuple, polys[0].vertices.round(9))) == [(0.15, 0.15), (0.15, 0.3), (0.3, 0.15), (0.3, 0.3)]


def test_extract_contours_rectangle_area():
    res = 0.15
    cells = np.zeros((8, 14), dtype=bool)
    cells[2:6, 2:12] = True
    polys = extract_contours(OccupancyGrid2D(res, (0.0, 0.0), cells))
    assert len(polys) == 1
    assert abs(polys[0].area - 10 * 4 * res**2) <= 2 * res**2


def test_extract_contours_fills_holes_and_bridges_corners():
    cells = np.zeros((7, 7), dtype=bool)
    cells[1:6, 1:6] = True
    cells[3, 3] = False  # hole
    cells[6, 6] = True  # corner-only contact
    polys = extract_contours(OccupancyGrid2D(1.0, (0.0, 0.0), cells))
    assert len(polys) == 1
    assert polys[0].area >= 26


# ---------------------------------------------------------------- simplification

def test_simplify_epsilon_zero_identity():
    poly = Polygon2D([(0, 0), (1, 0), (1.5, 0.2), (2, 0), (2, 2), (0, 2)])
    assert simplify_polygon(poly, 0.0) == poly


def test_simplify_collinear_midpoints():
    poly = Polygon2D([(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1)])
    out = simplify_polygon(poly, 0.01)
    assert sorted(map(tuple, out.vertices)) == [(0, 0), (0, 2), (2, 0), (2, 2)]


def test_simplify_jittered_circle_within_epsilon():
    rng = np.random.default_rng(0)
    eps = 0.1
    ang = np.arange(360) * 2 * np.pi / 360
    r = 5.0 + rng.uniform(-0.25 * eps, 0.25 * eps, 360)
    poly = Polygon2D(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
    out = simplify_polygon(poly, eps)
    assert len(out) < len(poly)
    # output vertices come from the input, and every input vertex stays within eps of the output
    assert _dist_to_polyline(out.vertices, poly.vertices).max() <= 1e-12
    assert _dist_to_polyline(poly.vertices, out.vertices).max() <= eps + 1e-12


def test_simplify_outward_only_contains_input():
    rng = np.random.default_rng(1)
    ang = np.arange(200) * 2 * np.pi / 200
    r = 3.0 + 0.3 * np.sin(5 * ang) + rng.uniform(-0.02, 0.02, 200)
    poly = Polygon2D(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
    out = simplify_polygon(poly, 0.15, outward_only=True)
    assert len(out) < len(poly)
    assert ShapelyPolygon(out.vertices).buffer(1e-9).contains(ShapelyPolygon(poly.vertices))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.3))
def test_simplify_keeps_a_simple_polygon(seed, eps):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 80))
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    ang = np.unique(np.round(ang, 6))
    if len(ang) < 3:
        return
    r = rng.uniform(1.0, 2.0, len(ang))
    poly = Polygon2D(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
    for outward in (False, True):
        out = simplify_polygon(poly, eps, outward_only=outward)
        assert len(out) >= 3
        assert ShapelyPolygon(out.vertices).is_valid


# ---------------------------------------------------------------- vertical contours

def test_single_layer_all_top():
    pmap = connect_vertical_contours(layered([[square(0, 0, 1)]]), 3, 0.6)
    assert pmap.vertical_edges == []
    assert all(pmap.top_layer_marks.values())
    assert pmap.top_polygons() == [(0, 0)]


def test_two_layers_k1_one_edge_per_vertex():
    tri = Polygon2D([(0, 0), (1, 0), (0, 1)])
    pmap = connect_vertical_contours(layered([[tri], [tri]]), 1, 0.5)
    assert len(pmap.vertical_edges) == 3
    pos = pmap.vertex_by_id
    for a, b in pmap.vertical_edges:
        assert pos[a].position[:2] == pos[b].position[:2]
        assert pos[b].layer == pos[a].layer + 1


def test_stacked_boxes_knn_brute_force():
    box = square(0, 0, 0.5)
    pmap = connect_vertical_contours(layered([[box], [box], [box]]), 2, 1.1)
    by_layer = {}
    for v in pmap.vertices:
        by_layer.setdefault(v.layer, []).append(v)
    expected = set()
    for layer in (0, 1):
        for v in by_layer[layer]:
            d = sorted((np.hypot(*np.subtract(u.position[:2], v.position[:2])), u.id) for u in by_layer[layer + 1])
            expected |= {(v.id, uid) for dist, uid in d[:2] if dist <= 1.1}
    assert set(pmap.vertical_edges) == expected
    assert len(expected) == 16
    assert sum(pmap.top_layer_marks.values()) == 4


def test_vertical_radius_excludes_far_vertices():
    pmap = connect_vertical_contours(layered([[square(0, 0, 0.5)], [square(5, 0, 0.5)]]), 3, 0.6)
    assert pmap.vertical_edges == []


# ---------------------------------------------------------------- pipeline

def test_build_empty_cloud():
    pmap = build_polyhedral_map(np.zeros((0, 3)), NavConfig(z_ceiling=2.0))
    assert pmap.vertices == [] and pmap.vertical_edges == []


def test_build_one_box_three_slabs():
    cfg = NavConfig(z_ceiling=3.0)
    pmap = build_polyhedral_map(box_cloud(0.0, 0.0, 0.0, 1.0, 1.0, 1.45), cfg)
    counts = [len(p) for p in pmap.base.polygons_per_layer]
    assert counts[:3] == [1, 1, 1] and sum(counts) == 3
    footprint = ShapelyPolygon([(0, 0), (1, 0), (1, 1), (0, 1)])
    for layer in range(3):
        poly = pmap.base.polygons_per_layer[layer][0]
        # a rounded-corner square: 4 sides plus short chamfers
        assert 4 <= len(poly) <= 8
        shape = ShapelyPolygon(poly.vertices)
        assert shape.contains(footprint.buffer(cfg.inflation_radius - cfg.resolution))
        assert footprint.buffer(cfg.inflation_radius + 2 * cfg.resolution).contains(shape)
    assert len(pmap.vertical_edges) >= 8


def test_build_two_boxes_never_cross_linked():
    cfg = NavConfig(z_ceiling=2.0)
    pts = np.vstack([box_cloud(0, 0, 0, 1, 1, 1.5), box_cloud(4, 0, 0, 5, 1, 1.5)])
    pmap = build_polyhedral_map(pts, cfg)
    assert cfg.knn_search_radius < 3.0 - 2 * cfg.inflation_radius
    side = {v.id: v.position[0] < 2.5 for v in pmap.vertices}
    assert pmap.vertical_edges
    for a, b in pmap.vertical_edges:
        assert side[a] == side[b]


def test_build_is_deterministic():
    cfg = NavConfig(z_ceiling=2.0)
    pts = box_cloud(0, 0, 0, 1.2, 0.7, 1.4)
    a = build_polyhedral_map(pts, cfg)
    b = build_polyhedral_map(pts[::-1].copy(), cfg)
    assert a.fingerprint() == b.fingerprint()
    assert a.vertices == b.vertices and a.vertical_edges == b.vertical_edges


@pytest.mark.parametrize("seed", range(5))
def test_extracted_polygons_cover_the_inflated_obstacle(seed):
    """Every cell within the inflation radius of a point ends up inside a polygon."""
    rng = np.random.default_rng(seed)
    cfg = NavConfig(z_ceiling=1.0, slab_height=1.0)
    pts = np.column_stack([rng.uniform(0, 4, 60), rng.uniform(0, 4, 60), rng.uniform(0, 1, 60)])
    pmap = build_polyhedral_map(pts, cfg)
    shapes = [ShapelyPolygon(p.vertices) for p in pmap.base.polygons_per_layer[0]]
    union = unary_union(shapes).buffer(1e-9)
    for x, y, _ in pts:
        assert union.contains(Point(x, y).buffer(cfg.inflation_radius - cfg.resolution, 16))

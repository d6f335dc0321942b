import numpy as np
import pytest

from visnav.config import NavConfig
from visnav.extraction import LayeredPolygonMap, connect_vertical_contours
from visnav.geometry import LayerSlab, Polygon2D

# criterion number -> (passed, name, detail); filled by test_acceptance.py.
# passed is True, False or "WARN" (soft limit exceeded)
ACCEPTANCE: dict = {}


def square(cx, cy, half):
    return Polygon2D([(cx - half, cy - half), (cx + half, cy - half), (cx + half, cy + half), (cx - half, cy + half)])


def rect(x0, y0, x1, y1):
    return Polygon2D([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def slabs(n, height=0.5):
    return [LayerSlab(i, i * height, (i + 1) * height) for i in range(n)]


def layered(polys_per_layer, height=0.5, resolution=0.15, inflation=0.3):
    return LayeredPolygonMap(slabs(len(polys_per_layer), height), [list(p) for p in polys_per_layer],
                             resolution, inflation)


def polymap(polys_per_layer, k=3, radius=0.6, height=0.5):
    """Polyhedral map straight from polygons (no rasterization)."""
    return connect_vertical_contours(layered(polys_per_layer, height), k, radius)


def box_cloud(x0, y0, z0, x1, y1, z1, step=0.05):
    """Solid block of points on a ``step`` lattice, faces included."""
    xs = np.arange(x0, x1 + 1e-9, step)
    ys = np.arange(y0, y1 + 1e-9, step)
    zs = np.arange(z0, z1 + 1e-9, step)
    return np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)


@pytest.fixture
def config():
    return NavConfig(z_ceiling=3.0)


@pytest.fixture
def unit_square():
    return square(0.0, 0.0, 0.5)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, name, detail = ACCEPTANCE[num]
        status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"criterion {num} {name}: {status} ({detail})")

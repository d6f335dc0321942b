"""Synthetic scenes, a ray-cast range sensor and the closed navigation loop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from visnav.config import NavConfig
from visnav.extraction import (OccupancyGrid2D, PolyhedralMap, build_polyhedral_map,
                               polyhedral_map_from_grids)
from visnav.geometry import Polygon2D, as_point3
from visnav.global_graph import GlobalGraph, merge_local
from visnav.oracle import points_in_polygon, polyline_collisions
from visnav.path_search import TerminalInCollisionError, UnreachableError, plan
from visnav.vgraph import build_local_graph

log = logging.getLogger(__name__)

CYCLE_HZ = 7.5
GOAL_RADIUS = 1.0
STUCK_CYCLES = 20
STUCK_MOVE = 0.01


@dataclass(frozen=True)
class Obstacle:
    footprint: Polygon2D
    z_min: float
    z_max: float

    def __post_init__(self) -> None:
        if not self.z_min < self.z_max:
            raise ValueError("obstacle z_min must be below z_max")


@dataclass
class Scene:
    bounds: tuple[tuple[float, float, float], tuple[float, float, float]]
    obstacles: list[Obstacle] = field(default_factory=list)
    name: str = "custom"

    def __post_init__(self) -> None:
        lo, hi = self.bounds
        self.bounds = (tuple(float(c) for c in lo), tuple(float(c) for c in hi))
        for ob in self.obstacles:
            xmin, ymin, xmax, ymax = ob.footprint.bbox
            if (xmin < lo[0] - 1e-9 or ymin < lo[1] - 1e-9 or xmax > hi[0] + 1e-9 or ymax > hi[1] + 1e-9
                    or ob.z_min < lo[2] - 1e-9 or ob.z_max > hi[2] + 1e-9):
                raise ValueError("obstacle outside scene bounds")

    def nav_config(self, base: Optional[NavConfig] = None) -> NavConfig:
        """Config with the slab stack spanning the scene's height."""
        base = base or NavConfig()
        return base.replace(z_floor=self.bounds[0][2], z_ceiling=self.bounds[1][2])


def box(x0, y0, x1, y1, z0, z1) -> Obstacle:
    return Obstacle(Polygon2D([(x0, y0), (x1, y0), (x1, y1), (x0, y1)]), z0, z1)


def regular_polygon(cx, cy, radius, sides, z0, z1, phase=0.0) -> Obstacle:
    ang = phase + np.arange(sides) * 2 * np.pi / sides
    return Obstacle(Polygon2D(np.column_stack([cx + radius * np.cos(ang), cy + radius * np.sin(ang)])), z0, z1)


# ------------------------------------------------------------------ layouts

def wall_scene() -> Scene:
    """A single long wall lower than the ceiling, terminals on either side."""
    return Scene(((-12.0, -12.0, 0.0), (12.0, 12.0, 5.0)), [box(-0.1, -8.0, 0.1, 8.0, 0.0, 2.2)], "wall")


WALL_START = (-4.0, 0.0, 1.0)
WALL_GOAL = (4.0, 0.0, 1.0)


def dead_end_scene() -> Scene:
    """U-shaped corridor open to the south, walls up to the ceiling; the goal
    lies north of its closed end."""
    h = 3.0
    obstacles = [
        box(-2.7, -6.0, -2.5, 10.0, 0.0, h),
        box(2.5, -6.0, 2.7, 10.0, 0.0, h),
        box(-2.7, 10.0, 2.7, 10.2, 0.0, h),
    ]
    return Scene(((-15.0, -15.0, 0.0), (15.0, 25.0, h)), obstacles, "dead_end")


DEAD_END_START = (0.0, -3.0, 1.0)
DEAD_END_GOAL = (0.0, 20.0, 1.0)


def garage_like_scene(seed: int = 0) -> Scene:
    """Pillar grid, parked cars and low ceiling beams in a 40 x 30 x 4 m hall."""
    rng = np.random.default_rng(seed)
    obs = []
    for px in np.arange(-16.0, 17.0, 8.0):
        for py in (-8.0, 0.0, 8.0):
            obs.append(box(px - 0.3, py - 0.3, px + 0.3, py + 0.3, 0.0, 4.0))
    for px in np.arange(-14.0, 15.0, 4.0):
        for py in (-4.5, 4.5):
            if rng.random() < 0.6:
                x = px + rng.uniform(-0.4, 0.4)
                obs.append(box(x - 0.9, py - 2.2, x + 0.9, py + 2.2, 0.0, 1.5))
    for py in (-8.0, 8.0):
        obs.append(box(-18.0, py - 0.2, 18.0, py + 0.2, 3.3, 4.0))
    return Scene(((-20.0, -15.0, 0.0), (20.0, 15.0, 4.0)), obs, "garage_like")


def factory_like_scene(seed: int = 0) -> Scene:
    """Tanks, sheds and stacks on a 50 x 50 x 10 m yard."""
    rng = np.random.default_rng(seed)
    obs = []
    for _ in range(5):
        cx, cy = rng.uniform(-18, 18, size=2)
        obs.append(regular_polygon(cx, cy, rng.uniform(1.5, 3.0), 8, 0.0, rng.uniform(3.0, 7.0)))
    for _ in range(4):
        cx, cy = rng.uniform(-18, 18, size=2)
        w, d = rng.uniform(3.0, 8.0, size=2)
        obs.append(box(cx - w / 2, cy - d / 2, cx + w / 2, cy + d / 2, 0.0, rng.uniform(2.0, 5.0)))
    for _ in range(3):
        cx, cy = rng.uniform(-18, 18, size=2)
        obs.append(regular_polygon(cx, cy, 0.6, 6, 0.0, 9.5))
    return Scene(((-25.0, -25.0, 0.0), (25.0, 25.0, 10.0)), obs, "factory_like")


def random_scene(seed: int, count: int = 10, size: tuple[float, float, float] = (40.0, 40.0, 8.0)) -> Scene:
    """``count`` random extruded boxes and prisms in a ``size`` volume.

    Footprints span 1-6 m, tops 1 m up to the ceiling; obstacles may
    overlap. Bases mostly sit on the floor, some float (overhangs).
    """
    rng = np.random.default_rng(seed)
    sx, sy, sz = size
    obs = []
    for _ in range(count):
        w, d = rng.uniform(1.0, 6.0, size=2)
        cx = rng.uniform(-sx / 2 + w / 2 + 0.5, sx / 2 - w / 2 - 0.5)
        cy = rng.uniform(-sy / 2 + d / 2 + 0.5, sy / 2 - d / 2 - 0.5)
        top = rng.uniform(1.0, sz)
        base = 0.0 if rng.random() < 0.8 else rng.uniform(0.0, top - 0.5)
        if rng.random() < 0.3:
            obs.append(regular_polygon(cx, cy, min(w, d) / 2, int(rng.integers(5, 9)), base, top,
                                       phase=rng.uniform(0, np.pi)))
        else:
            obs.append(box(cx - w / 2, cy - d / 2, cx + w / 2, cy + d / 2, base, top))
    return Scene(((-sx / 2, -sy / 2, 0.0), (sx / 2, sy / 2, sz)), obs, f"random-{seed}")


LAYOUTS = {
    "wall": lambda seed=0: wall_scene(),
    "dead_end": lambda seed=0: dead_end_scene(),
    "garage_like": garage_like_scene,
    "factory_like": factory_like_scene,
    "random": lambda seed=0, count=10: random_scene(seed, count),
}


def make_scene(name: str, seed: int = 0, count: int = 10) -> Scene:
    if name == "random":
        return random_scene(seed, count)
    if name not in LAYOUTS:
        raise ValueError(f"unknown layout {name!r}; choose from {sorted(LAYOUTS)}")
    return LAYOUTS[name](seed)


# ------------------------------------------------------------------ full-knowledge map

def rasterize_scene(scene: Scene, config: NavConfig) -> list[OccupancyGrid2D]:
    """Per-slab occupancy of the true obstacles (a cell is occupied when the
    footprint touches it and the obstacle's z-range meets the slab)."""
    res = config.resolution
    (x0, y0, _), (x1, y1, _) = scene.bounds
    gx0, gy0 = int(math.floor(x0 / res)), int(math.floor(y0 / res))
    nx = int(math.ceil(x1 / res)) - gx0
    ny = int(math.ceil(y1 / res)) - gy0
    origin = (gx0 * res, gy0 * res)
    ix = np.arange(nx)
    iy = np.arange(ny)
    cx, cy = np.meshgrid(origin[0] + (ix + 0.5) * res, origin[1] + (iy + 0.5) * res)
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    masks = []
    for ob in scene.obstacles:
        mask = np.zeros((ny, nx), dtype=bool)
        v = ob.footprint.vertices
        # interior by cell centers, boundary by dense sampling of the edges
        mask.ravel()[points_in_polygon(centers, v)] = True
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            n = max(2, int(math.ceil(np.linalg.norm(b - a) / (0.25 * res))) + 1)
            pts = a + np.linspace(0, 1, n)[:, None] * (b - a)
            jx = np.clip(np.floor(pts[:, 0] / res + 1e-9).astype(int) - gx0, 0, nx - 1)
            jy = np.clip(np.floor(pts[:, 1] / res + 1e-9).astype(int) - gy0, 0, ny - 1)
            mask[jy, jx] = True
        masks.append(mask)
    grids = []
    for slab in config.slabs():
        cells = np.zeros((ny, nx), dtype=bool)
        for ob, mask in zip(scene.obstacles, masks):
            if ob.z_min <= slab.z_max and ob.z_max >= slab.z_min:
                cells |= mask
        grids.append(OccupancyGrid2D(res, origin, cells))
    return grids


def scene_map(scene: Scene, config: NavConfig) -> PolyhedralMap:
    """Polyhedral map of the fully known scene."""
    return polyhedral_map_from_grids(rasterize_scene(scene, config), config.slabs(), config)


# ------------------------------------------------------------------ sensor

@dataclass
class SensorFrame:
    pose: tuple[float, float, float]
    points: np.ndarray
    range: float
    rays: int


def ray_directions(rays: int, vertical_fov: float = 90.0) -> np.ndarray:
    """Deterministic fan: 360 deg azimuth x ``vertical_fov`` elevation."""
    n_el = max(1, int(round(math.sqrt(rays * vertical_fov / 360.0))))
    n_az = max(1, rays // n_el)
    half = math.radians(vertical_fov) / 2
    el = np.linspace(-half, half, n_el) if n_el > 1 else np.zeros(1)
    az = np.arange(n_az) * 2 * np.pi / n_az
    A, E = np.meshgrid(az, el)
    return np.column_stack([(np.cos(E) * np.cos(A)).ravel(), (np.cos(E) * np.sin(A)).ravel(), np.sin(E).ravel()])


def _ray_hits(origin: np.ndarray, dirs: np.ndarray, ob: Obstacle, max_t: np.ndarray) -> np.ndarray:
    """Distance to the first hit of each ray on the prism (inf if none)."""
    t_best = np.full(len(dirs), np.inf)
    ox, oy, oz = origin
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    v = ob.footprint.vertices
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        ex, ey = b[0] - a[0], b[1] - a[1]
        den = dx * ey - dy * ex
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((a[0] - ox) * ey - (a[1] - oy) * ex) / den
            s = ((a[0] - ox) * dy - (a[1] - oy) * dx) / den
            z = oz + t * dz
        ok = (np.abs(den) > 1e-12) & (t > 1e-9) & (s >= 0) & (s <= 1)
        ok &= (z >= ob.z_min) & (z <= ob.z_max) & (t < t_best)
        t_best[ok] = t[ok]
    for zc in (ob.z_min, ob.z_max):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (zc - oz) / dz
        ok = (np.abs(dz) > 1e-12) & (t > 1e-9) & (t < t_best) & (t <= max_t)
        if ok.any():
            idx = np.nonzero(ok)[0]
            pts = np.column_stack([ox + t[idx] * dx[idx], oy + t[idx] * dy[idx]])
            inside = points_in_polygon(pts, v)
            t_best[idx[inside]] = t[idx[inside]]
    return t_best


def cast_sensor(scene: Scene, pose, range_: float = 30.0, rays: int = 16000) -> SensorFrame:
    pose = as_point3(pose)
    origin = np.array(pose, dtype=float)
    dirs = ray_directions(rays)
    t = np.full(len(dirs), np.inf)
    for ob in scene.obstacles:
        xmin, ymin, xmax, ymax = ob.footprint.bbox
        # skip prisms entirely out of range
        dx = max(xmin - pose.x, 0.0, pose.x - xmax)
        dy = max(ymin - pose.y, 0.0, pose.y - ymax)
        if math.hypot(dx, dy) > range_:
            continue
        t = np.minimum(t, _ray_hits(origin, dirs, ob, np.full(len(dirs), range_)))
    hit = t <= range_
    pts = origin + t[hit, None] * dirs[hit]
    return SensorFrame(tuple(pose), pts, range_, len(dirs))


# ------------------------------------------------------------------ navigation

@dataclass
class NavLog:
    records: list[dict] = field(default_factory=list)
    trace: list[tuple[float, float, float]] = field(default_factory=list)
    travel_distance: float = 0.0
    travel_time: float = 0.0
    success: bool = False
    verdict: str = "running"

    def summary(self) -> dict:
        return {"travel_distance": self.travel_distance, "travel_time": self.travel_time,
                "success": self.success, "verdict": self.verdict, "cycles": len(self.records)}

    def deterministic_view(self) -> dict:
        """Everything except wall-clock timings."""
        rows = [{k: v for k, v in r.items() if not k.endswith("_ms")} for r in self.records]
        return {"records": rows, "trace": self.trace, **self.summary()}


class _CloudAccumulator:
    """Union of all observed points, deduplicated on a fine lattice."""

    def __init__(self, cell: float):
        self.cell = cell
        self.keys: set = set()
        self.chunks: list[np.ndarray] = []

    def add(self, pts: np.ndarray) -> None:
        if len(pts) == 0:
            return
        k = np.floor(pts / self.cell).astype(np.int64)
        _, first = np.unique(k, axis=0, return_index=True)
        fresh = [i for i in np.sort(first) if tuple(k[i]) not in self.keys]
        if fresh:
            self.keys.update(tuple(k[i]) for i in fresh)
            self.chunks.append(pts[fresh])

    @property
    def points(self) -> np.ndarray:
        return np.vstack(self.chunks) if self.chunks else np.zeros((0, 3))


def _advance(waypoints: Sequence, step: float) -> tuple[tuple, list[tuple]]:
    """Walk ``step`` meters along the polyline; returns the new pose and
    the corner points passed on the way."""
    pos = np.array(waypoints[0], dtype=float)
    passed = []
    left = step
    for wp in waypoints[1:]:
        wp = np.array(wp, dtype=float)
        seg = np.linalg.norm(wp - pos)
        if seg >= left:
            if seg > 0:
                pos = pos + (wp - pos) * (left / seg)
            return tuple(float(c) for c in pos), passed
        left -= seg
        pos = wp
        passed.append(tuple(float(c) for c in pos))
    return tuple(float(c) for c in pos), passed[:-1] if passed else passed


def _free_nearby(pmap: PolyhedralMap, p, max_r: float = 1.0, step: float = 0.05):
    """Closest point to p (ring search) that is not inside an obstacle."""
    compiled = pmap.compiled
    if not compiled.point_blocked(p):
        return p
    for r in np.arange(step, max_r + 1e-9, step):
        n = max(8, int(2 * np.pi * r / step))
        for k in range(n):
            a = 2 * np.pi * k / n
            q = (p[0] + r * math.cos(a), p[1] + r * math.sin(a), p[2])
            if not compiled.point_blocked(q):
                return q
    return None


def navigate(scene: Scene, start, goal, config: NavConfig, speed: float = 2.0, max_cycles: int = 600,
             sensor_range: float = 30.0, rays: int = 16000, on_cycle=None) -> NavLog:
    """Closed loop: sense, map, build local graph, merge, plan, advance.

    ``on_cycle(cycle, global_graph)`` is called after every merge (used for
    graph dumps).
    """
    pos = tuple(float(c) for c in as_point3(start))
    goal = tuple(float(c) for c in as_point3(goal))
    step = speed / CYCLE_HZ
    acc = _CloudAccumulator(config.resolution / 3.0)
    glob = GlobalGraph.from_config(config)
    log_ = NavLog(trace=[pos])
    still = 0
    half = config.local_extent / 2
    for cycle in range(max_cycles):
        frame = cast_sensor(scene, pos, sensor_range, rays)
        acc.add(frame.points)
        t0 = time.perf_counter()
        cloud = acc.points
        global_map = build_polyhedral_map(cloud, config)
        near = (np.abs(cloud[:, 0] - pos[0]) <= half) & (np.abs(cloud[:, 1] - pos[1]) <= half)
        local_map = build_polyhedral_map(cloud[near], config)
        rng = np.random.default_rng([config.rng_seed, cycle])
        local_graph, _ = build_local_graph(local_map, config, rng)
        glob = merge_local(glob, local_graph, pos, config.local_extent, global_map)
        t1 = time.perf_counter()
        if on_cycle is not None:
            on_cycle(cycle, glob)

        start_p = _free_nearby(global_map, pos)
        record = {"cycle": cycle, "graph_update_ms": (t1 - t0) * 1e3, "path_search_ms": 0.0,
                  "path_length": math.nan, "robot_pose": pos, "n_vertices": len(glob.graph)}
        if start_p is None:
            log_.records.append(record)
            log_.verdict = "start-in-collision"
            break
        try:
            path, _ = plan(glob.graph, global_map, start_p, goal, config)
        except TerminalInCollisionError:
            log_.records.append(record)
            log_.verdict = "goal-in-collision"
            break
        except UnreachableError:
            log_.records.append(record)
            log_.verdict = "unreachable"
            break
        record["path_search_ms"] = (time.perf_counter() - t1) * 1e3
        record["path_length"] = path.length
        log_.records.append(record)

        wps = list(path.waypoints)
        record["nudged"] = start_p != pos
        if start_p != pos:
            wps = [pos] + wps
        new_pos, passed = _advance(wps, step)
        executed = [pos] + passed + [new_pos]
        # the motion of this cycle against the map it was planned on
        record["executed_clear"] = not polyline_collisions(executed, global_map)
        moved = 0.0
        prev = pos
        for q in passed + [new_pos]:
            moved += math.dist(prev, q)
            log_.trace.append(q)
            prev = q
        log_.travel_distance += moved
        pos = new_pos
        still = still + 1 if moved < STUCK_MOVE else 0
        if math.dist(pos, goal) <= GOAL_RADIUS:
            log_.success = True
            log_.verdict = "goal"
            break
        if still >= STUCK_CYCLES:
            log_.verdict = "stuck"
            break
    else:
        log_.verdict = "max-cycles"
    log_.travel_time = len(log_.records) / CYCLE_HZ
    return log_

"""Hierarchical 3D visibility-graph construction and path search."""

from visnav.config import NavConfig
from visnav.geometry import (
    LayerSlab,
    Point3,
    Polygon2D,
    Segment3,
    check_visibility,
    clip_segment_to_slab,
    point_in_polygon,
    segment_polygon_intersections,
)
from visnav.extraction import (
    LayeredPolygonMap,
    OccupancyGrid2D,
    PolyhedralMap,
    build_polyhedral_map,
    connect_vertical_contours,
    extract_contours,
    inflate,
    simplify_polygon,
    slice_cloud,
)
from visnav.vgraph import GraphStats, GraphVertex, VisibilityGraph, build_local_graph
from visnav.global_graph import GlobalGraph, merge_local
from visnav.path_search import (
    Path,
    RefineState,
    TerminalInCollisionError,
    UnreachableError,
    attach_terminals,
    dijkstra,
    plan,
)
from visnav.oracle import astar_26, exhaustive_vgraph, polyline_collisions, voxelize
from visnav.sim import NavLog, Obstacle, Scene, SensorFrame, cast_sensor, make_scene, navigate

__version__ = "0.1.0"

__all__ = [
    "NavConfig",
    "LayerSlab",
    "Point3",
    "Polygon2D",
    "Segment3",
    "check_visibility",
    "clip_segment_to_slab",
    "point_in_polygon",
    "segment_polygon_intersections",
    "LayeredPolygonMap",
    "OccupancyGrid2D",
    "PolyhedralMap",
    "build_polyhedral_map",
    "connect_vertical_contours",
    "extract_contours",
    "inflate",
    "simplify_polygon",
    "slice_cloud",
    "GraphStats",
    "GraphVertex",
    "VisibilityGraph",
    "build_local_graph",
    "GlobalGraph",
    "merge_local",
    "Path",
    "RefineState",
    "TerminalInCollisionError",
    "UnreachableError",
    "attach_terminals",
    "dijkstra",
    "plan",
    "astar_26",
    "exhaustive_vgraph",
    "polyline_collisions",
    "voxelize",
    "NavLog",
    "Obstacle",
    "Scene",
    "SensorFrame",
    "cast_sensor",
    "make_scene",
    "navigate",
]

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import polymap, rect, square
from visnav.config import NavConfig
from visnav.extraction import GraphVertex
from visnav.geometry import check_visibility
from visnav.oracle import polyline_collisions, segment_collides
from visnav.path_search import (
    LIFT_EPS,
    Path,
    RefineState,
    TerminalInCollisionError,
    UnreachableError,
    attach_terminals,
    dijkstra,
    divide_and_insert,
    plan,
    refine_once,
)
from visnav.sim import dead_end_scene, scene_map
from visnav.vgraph import SAME_LAYER, VisibilityGraph, build_local_graph

WALL_TOP = 2.0


def wall_map():
    """0.4 m thick, 6 m long wall filling slabs 0-3 (z 0-2) under a 3 m ceiling."""
    wall = rect(-0.2, -3.0, 0.2, 3.0)
    return polymap([[wall], [wall], [wall], [wall], [], []])


def _cfg(**kw):
    return NavConfig(z_ceiling=3.0, sample_count=0, **kw)


# ---------------------------------------------------------------- terminals

def test_attach_in_free_space():
    pmap = polymap([[], []])
    g = attach_terminals(VisibilityGraph(), pmap, (0, 0, 0.2), (3, 1, 0.7))
    assert len(g) == 2 and g.n_edges == 1
    assert [v.origin for v in g.vertices] == ["terminal", "terminal"]


def test_attach_goal_inside_box():
    pmap = polymap([[square(0, 0, 1.0)]])
    with pytest.raises(TerminalInCollisionError):
        attach_terminals(VisibilityGraph(), pmap, (5, 5, 0.25), (0, 0, 0.25))


def test_attach_across_wall():
    pmap = wall_map()
    graph, _ = build_local_graph(pmap, _cfg())
    out = attach_terminals(graph, pmap, (-3, 0, 0.25), (3, 0, 0.25))
    s, g = out.next_id() - 2, out.next_id() - 1
    assert not out.has_edge(s, g)
    corners = {(round(x, 6), round(y, 6)) for x in (-0.2, 0.2) for y in (-3.0, 3.0)}
    for t in (s, g):
        assert out.degree(t) > 0
        for u in out.neighbors(t):
            assert (round(out.vertex(u).position[0], 6), round(out.vertex(u).position[1], 6)) in corners
            assert not segment_collides(out.vertex(t).position, out.vertex(u).position, pmap)


# ---------------------------------------------------------------- dijkstra

def _graph(points, edges):
    g = VisibilityGraph(GraphVertex(i, p, 0) for i, p in enumerate(points))
    for a, b in edges:
        g.add_edge(a, b, SAME_LAYER)
    return g


def test_dijkstra_start_is_goal():
    p = dijkstra(_graph([(0, 0, 0)], []), 0, 0)
    assert len(p) == 1 and p.length == 0.0


def test_dijkstra_single_edge():
    p = dijkstra(_graph([(0, 0, 0), (3, 4, 0)], [(0, 1)]), 0, 1)
    assert p.nodes == [0, 1] and p.length == 5.0


def test_dijkstra_disconnected():
    assert dijkstra(_graph([(0, 0, 0), (1, 0, 0)], []), 0, 1) is None


def test_dijkstra_tie_break_is_lexicographic():
    # two equal routes 0-1-3 and 0-2-3
    g = _graph([(0, 0, 0), (1, 1, 0), (1, -1, 0), (2, 0, 0)], [(0, 2), (2, 3), (0, 1), (1, 3)])
    assert dijkstra(g, 0, 3).nodes == [0, 1, 3]
    assert dijkstra(g, 3, 0).nodes == [3, 1, 0]


def _brute_force(g, s, t):
    best = math.inf
    stack = [(s, [s], 0.0)]
    while stack:
        u, route, d = stack.pop()
        if u == t:
            best = min(best, d)
            continue
        for w in g.neighbors(u):
            if w not in route:
                stack.append((w, route + [w], d + g.weight(u, w)))
    return best


@pytest.mark.parametrize("seed", range(40))
def test_dijkstra_matches_path_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 13))
    pts = [tuple(rng.uniform(0, 10, 3)) for _ in range(n)]
    edges = [(a, b) for a, b in itertools.combinations(range(n), 2) if rng.random() < 0.35]
    g = _graph(pts, edges)
    s, t = 0, n - 1
    best = _brute_force(g, s, t)
    p = dijkstra(g, s, t)
    if math.isinf(best):
        assert p is None
    else:
        assert p.length == pytest.approx(best, rel=1e-12)
        assert all(g.has_edge(a, b) for a, b in zip(p.nodes, p.nodes[1:]))


# ---------------------------------------------------------------- divide and insert

def test_divide_two_waypoints():
    assert divide_and_insert(Path([(0, 0, 0.25), (5, 0, 0.25)]), wall_map()) == []


def test_divide_free_collinear_path():
    path = Path([(x, 5.0, 0.25) for x in range(5)])
    assert divide_and_insert(path, wall_map()) == []


def test_divide_wall_candidates():
    pmap = wall_map()
    start, goal = (-3.0, 0.0, 0.25), (3.0, 0.0, 0.25)
    path = Path([start, (-0.2, 3.0, 0.25), (0.2, 3.0, 0.25), goal])
    cands = divide_and_insert(path, pmap)
    pts = {tuple(round(c, 6) for c in v.position) for v in cands}
    z = round(WALL_TOP + LIFT_EPS, 6)
    # the odd-subset shortcut (corner 1 -> goal) crosses the top contour at its
    # start corner and where it leaves the wall's east face
    y_exit = 3.0 - 0.4 * 3.0 / 3.2
    assert (-0.2, 3.0, z) in pts
    assert (0.2, round(y_exit, 6), z) in pts
    # every candidate sits on the wall's outline, just above its top
    for x, y, zz in pts:
        assert zz == z
        on_side = abs(abs(x) - 0.2) < 1e-6 and abs(y) <= 3.0 + 1e-6
        on_end = abs(abs(y) - 3.0) < 1e-6 and abs(x) <= 0.2 + 1e-6
        assert on_side or on_end
    # terminals-to-terminal crossing of the straight shortcut
    assert (-0.2, 0.0, z) in pts and (0.2, 0.0, z) in pts


def test_divide_respects_ceiling():
    wall = rect(-0.2, -3.0, 0.2, 3.0)
    pmap = polymap([[wall], [wall]])  # wall reaches the ceiling
    path = Path([(-3, 0, 0.25), (-0.2, 3, 0.25), (0.2, 3, 0.25), (3, 0, 0.25)])
    assert divide_and_insert(path, pmap) == []


# ---------------------------------------------------------------- refinement

def test_refine_converged_state_unchanged():
    pmap = wall_map()
    graph, _ = build_local_graph(pmap, _cfg())
    state = RefineState(Path([(-3, 0, 0.25), (-3, 1, 0.25)]), converged=True, history=[1.0])
    before = (state.current, list(state.history), state.iteration)
    assert refine_once(state, graph, pmap) is state
    assert (state.current, state.history, state.iteration) == before


def test_refine_flies_over_wall():
    pmap = wall_map()
    graph, _ = build_local_graph(pmap, _cfg())
    path, state = plan(graph, pmap, (-3, 0, 0.25), (3, 0, 0.25), _cfg(max_refine_iterations=0))
    # initial path stays in the vertex domain and goes round an end of the wall
    assert max(abs(p.y) for p in path.waypoints) >= 3.0 - 1e-9
    refined = refine_once(state, graph, pmap).current
    assert refined.length < path.length
    assert max(p.z for p in refined.waypoints) > WALL_TOP
    # over the wall: climb to the top corner, cross, come down
    expected = 2 * math.hypot(2.8, WALL_TOP - 0.25) + 0.4
    assert refined.length == pytest.approx(expected, abs=1e-4)
    assert not polyline_collisions(refined.waypoints, pmap)


def test_refine_straight_path_identical():
    pmap = wall_map()
    graph, _ = build_local_graph(pmap, _cfg())
    path, state = plan(graph, pmap, (-3, 5, 0.25), (3, 5, 0.25), _cfg(max_refine_iterations=0))
    assert len(path) == 2
    refine_once(state, graph, pmap)
    assert state.current.waypoints == path.waypoints
    assert state.converged


# ---------------------------------------------------------------- plan

def test_plan_free_space_straight():
    pmap = polymap([[], []])
    path, state = plan(VisibilityGraph(), pmap, (0, 0, 0.1), (4, 3, 0.1), _cfg())
    assert len(path) == 2 and path.length == pytest.approx(5.0)


def test_plan_unreachable():
    # overlapping pieces, so no seam between them
    ring = [rect(-2, -2, 2, -1.4), rect(-2, 1.4, 2, 2), rect(-2, -1.6, -1.4, 1.6), rect(1.4, -1.6, 2, 1.6)]
    pmap = polymap([ring])
    graph, _ = build_local_graph(pmap, NavConfig(z_ceiling=0.5))
    with pytest.raises(UnreachableError):
        plan(graph, pmap, (0, 0, 0.25), (5, 0, 0.25), NavConfig(z_ceiling=0.5))


def test_plan_leaves_dead_end_through_opening():
    scene = dead_end_scene()
    cfg = scene.nav_config()
    pmap = scene_map(scene, cfg)
    graph, _ = build_local_graph(pmap, cfg)
    path, state = plan(graph, pmap, (0.0, 5.0, 1.0), (0.0, 20.0, 1.0), cfg)
    assert not polyline_collisions(path.waypoints, pmap)
    assert min(p.y for p in path.waypoints) < -6.0
    for a, b in zip(path.waypoints, path.waypoints[1:]):
        assert check_visibility((a, b), pmap)


def test_plan_timing_fields():
    pmap = wall_map()
    graph, _ = build_local_graph(pmap, _cfg())
    _, state = plan(graph, pmap, (-3, 0, 0.25), (3, 0, 0.25), _cfg())
    assert set(state.timing) == {"attach_ms", "search_ms", "refine_ms", "total_ms"}
    assert len(state.timing["refine_ms"]) == state.iteration


box_lists = st.lists(
    st.tuples(st.floats(-4, 4), st.floats(-4, 4), st.floats(0.3, 1.5), st.integers(1, 4)),
    min_size=1, max_size=5,
)


@settings(max_examples=30, deadline=None)
@given(box_lists, st.floats(0.05, 2.4), st.floats(0.05, 2.4))
def test_plan_paths_are_safe_and_monotone(boxes, z0, z1):
    layers = [[] for _ in range(5)]
    placed = []
    for x, y, h, top in boxes:
        if any(abs(x - px) < h + ph + 0.2 and abs(y - py) < h + ph + 0.2 for px, py, ph in placed):
            continue
        placed.append((x, y, h))
        for layer in range(top):
            layers[layer].append(square(round(x, 3), round(y, 3), round(h, 3)))
    pmap = polymap(layers)
    cfg = NavConfig(z_ceiling=2.5)
    graph, _ = build_local_graph(pmap, cfg)
    start, goal = (-7.0, -7.0, z0), (7.0, 7.0, z1)
    path, state = plan(graph, pmap, start, goal, cfg)
    assert path.waypoints[0] == start and path.waypoints[-1] == goal
    assert all(b <= a + 1e-9 for a, b in zip(state.history, state.history[1:]))
    assert path.length >= math.dist(start, goal) - 1e-9
    for a, b in zip(path.waypoints, path.waypoints[1:]):
        assert check_visibility((a, b), pmap)
    assert not polyline_collisions(path.waypoints, pmap)

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import polymap, square
from visnav.config import NavConfig
from visnav.extraction import GraphVertex
from visnav.global_graph import GlobalGraph, match_vertices, merge_local
from visnav.vgraph import SAME_LAYER, VisibilityGraph, build_local_graph

EXTENT = 20.0


def _local(points, edges=()):
    g = VisibilityGraph(GraphVertex(i, p, 0) for i, p in enumerate(points))
    for a, b in edges:
        g.add_edge(a, b, SAME_LAYER)
    return g


def _glob(m=5):
    return GlobalGraph.from_config(NavConfig(disappear_frames=m))


def test_first_merge_copies_local():
    local = _local([(0, 0, 0.25), (1, 0, 0.25), (1, 1, 0.25)], [(0, 1), (1, 2)])
    out = merge_local(_glob(), local, (0, 0, 0), EXTENT)
    assert out.graph == local
    assert out.frame_index == 1


def test_merge_does_not_mutate_input():
    glob = _glob()
    merge_local(glob, _local([(0, 0, 0.25)]), (0, 0, 0), EXTENT)
    assert len(glob.graph) == 0 and glob.frame_index == 0


def test_merge_idempotent():
    local = _local([(0, 0, 0.25), (1, 0, 0.25), (1, 1, 0.25)], [(0, 1), (1, 2)])
    once = merge_local(_glob(), local, (0, 0, 0), EXTENT)
    twice = merge_local(once, local, (0, 0, 0), EXTENT)
    assert twice.graph == once.graph
    assert list(twice.graph.edges()) == list(once.graph.edges())


def test_disappearing_vertex_removed_after_m_frames():
    m = 5
    first = _local([(0, 0, 0.25), (3, 0, 0.25)], [(0, 1)])
    without = _local([(0, 0, 0.25)])
    glob = merge_local(_glob(m), first, (0, 0, 0), EXTENT)
    gone = 1
    for frame in range(1, m):
        glob = merge_local(glob, without, (0, 0, 0), EXTENT)
        assert gone in glob.graph, f"removed early after {frame} frames"
        assert glob.absence_counters[gone] == frame
    glob = merge_local(glob, without, (0, 0, 0), EXTENT)
    assert gone not in glob.graph
    assert 0 in glob.graph


def test_reobserved_vertex_resets_counter():
    first = _local([(0, 0, 0.25), (3, 0, 0.25)])
    without = _local([(0, 0, 0.25)])
    glob = merge_local(_glob(3), first, (0, 0, 0), EXTENT)
    glob = merge_local(glob, without, (0, 0, 0), EXTENT)
    glob = merge_local(glob, first, (0, 0, 0), EXTENT)
    assert glob.absence_counters[1] == 0
    for _ in range(2):
        glob = merge_local(glob, without, (0, 0, 0), EXTENT)
    assert 1 in glob.graph


def test_vertices_outside_extent_are_kept():
    glob = merge_local(_glob(2), _local([(0, 0, 0.25)]), (0, 0, 0), EXTENT)
    far_away = _local([(100, 100, 0.25)])
    for _ in range(5):
        glob = merge_local(glob, far_away, (100, 100, 0), EXTENT)
    assert 0 in glob.graph
    assert len(glob.graph) == 2


def test_small_drift_updates_position():
    glob = merge_local(_glob(), _local([(0, 0, 0.25), (2, 0, 0.25)], [(0, 1)]), (0, 0, 0), EXTENT)
    moved = _local([(0.1, 0, 0.25), (2, 0, 0.25)], [(0, 1)])
    glob = merge_local(glob, moved, (0, 0, 0), EXTENT)
    assert len(glob.graph) == 2
    assert glob.graph.vertex(0).position == (0.1, 0, 0.25)
    assert glob.graph.weight(0, 1) == 1.9


def test_large_jump_is_a_new_vertex():
    glob = merge_local(_glob(), _local([(0, 0, 0.25)]), (0, 0, 0), EXTENT)
    glob = merge_local(glob, _local([(1.0, 0, 0.25)]), (0, 0, 0), EXTENT)
    assert glob.graph.vertex_ids == [0, 1]


def test_match_is_mutual_nearest():
    gv = [GraphVertex(0, (0, 0, 0), 0), GraphVertex(1, (0.2, 0, 0), 0)]
    lv = [GraphVertex(0, (0.15, 0, 0), 0)]
    assert match_vertices(gv, lv, 0.3) == {0: 1}
    assert match_vertices(gv, lv, 0.01) == {}


def test_edges_recheck_against_new_map():
    cfg = NavConfig(z_ceiling=0.5)
    clear = polymap([[square(0, 0, 0.5)]])
    local, _ = build_local_graph(clear, cfg.replace(sample_count=0))
    glob = merge_local(_glob(), local, (0, 0, 0), EXTENT, clear)
    assert glob.graph.n_edges == local.n_edges
    # a new obstacle appears across the square's south face
    blocked = polymap([[square(0, 0, 0.5), square(0, -0.5, 0.2)]])
    glob = merge_local(glob, VisibilityGraph(), (50, 50, 0), EXTENT, blocked)
    assert glob.graph.n_edges < local.n_edges
    for a, b, _ in glob.graph.edges():
        pa, pb = glob.graph.vertex(a).position, glob.graph.vertex(b).position
        assert blocked.compiled.visible(pa, pb)


points = st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=1, max_size=12, unique=True)


@settings(max_examples=50, deadline=None)
@given(points, st.integers(0, 2**31))
def test_merge_idempotent_random(pts, seed):
    rng = np.random.default_rng(seed)
    local = _local([(0.5 * x, 0.5 * y, 0.25) for x, y in pts])
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            if rng.random() < 0.3:
                local.add_edge(a, b, SAME_LAYER)
    once = merge_local(_glob(), local, (0, 0, 0), EXTENT)
    twice = merge_local(once, local, (0, 0, 0), EXTENT)
    assert twice.graph == once.graph == local

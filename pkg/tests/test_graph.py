import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goreloc.exceptions import UnknownNode
from goreloc.geometry import DualQuadric
from goreloc.graph import (
    GraphNode,
    SceneGraph,
    build_frame_graph,
    build_map_graph,
    filter_detections,
    kernel_vector,
    knn_weights,
    node_distance,
    node_distance_matrix,
)
from goreloc.semantics import CategorySet, Detection, ObjectLandmark

from conftest import random_graph


def brute_force_kernel(g, root):
    """Neighbour sum with plain loops over every node pair."""
    r = [n.id for n in g.nodes].index(root)
    v = [0.0] * len(g.categories)
    for i in range(len(g.nodes)):
        for j in range(len(g.nodes)):
            if i != r or j == r:
                continue
            w = float(g.weights[i][j])
            if w == 0.0:
                continue
            for c in range(len(v)):
                v[c] += w * float(g.nodes[j].distribution[c])
    norm = math.sqrt(sum(x * x for x in v))
    return [x / norm for x in v] if norm > 0 else v


def make_graph(anchors, dists, names, edges):
    cats = CategorySet(names)
    nodes = [GraphNode(i, np.asarray(a, float), np.asarray(p, float), cats[int(np.argmax(p))]) for i, (a, p) in enumerate(zip(anchors, dists))]
    W = np.zeros((len(nodes), len(nodes)))
    for a, b, w in edges:
        W[a, b] = W[b, a] = w
    return SceneGraph(nodes, W, "frame", cats)


def det(x, y, label="chair", score=0.9, half=5.0):
    return Detection((x - half, y - half, x + half, y + half), label, score)


# -- KNN construction ------------------------------------------------------------


def test_frame_graph_collinear_k1():
    cats = CategorySet(["chair"])
    g = build_frame_graph([det(0, 0), det(10, 0), det(30, 0)], cats, k=1)
    assert sorted((a, b, w) for a, b, w in g.edges()) == [(0, 1, 10.0), (1, 2, 20.0)]


def test_single_detection_has_no_edges():
    g = build_frame_graph([det(5, 5)], CategorySet(["chair"]), k=5)
    assert len(g) == 1 and g.edges() == []


def test_saturated_k_gives_complete_graph():
    g = build_frame_graph([det(x, 2 * x) for x in range(0, 50, 10)], CategorySet(["chair"]), k=10)
    assert len(g.edges()) == 10


def _landmark(i, pos, cats):
    p = np.zeros(len(cats))
    p[0] = 1.0
    return ObjectLandmark(i, DualQuadric.sphere(pos, 0.1), p)


def test_map_graph_pair():
    cats = CategorySet(["chair"])
    g = build_map_graph([_landmark(0, [0, 0, 0], cats), _landmark(1, [2, 0, 0], cats)], cats, k=3)
    assert g.edges() == [(0, 1, 2.0)]


def test_map_graph_square_links_sides_not_diagonals():
    cats = CategorySet(["chair"])
    corners = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
    g = build_map_graph([_landmark(i, c, cats) for i, c in enumerate(corners)], cats, k=2)
    assert sorted(g.edges()) == [(0, 1, 1.0), (0, 3, 1.0), (1, 2, 1.0), (2, 3, 1.0)]


def test_empty_map_graph():
    g = build_map_graph([], CategorySet(["chair"]))
    assert len(g) == 0


def test_knn_ties_prefer_lower_id():
    # node 0 is equidistant from 1 and 2; with k=1 it picks the lower id
    W = knn_weights([[0, 0], [1, 0], [-1, 0]], [0, 1, 2], 1)
    assert W[0, 1] == 1.0 and W[0, 2] == 1.0  # 2 picked 0 itself
    W = knn_weights([[0, 0], [1, 0], [-1, 0]], [0, 2, 1], 1)
    assert W[0, 2] == 1.0


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_graph_is_symmetric_without_self_loops(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, int(rng.integers(2, 20)), 5)
    W = g.weights
    np.testing.assert_array_equal(W, W.T)
    assert np.all(np.diag(W) == 0)
    assert np.all(np.sum(W > 0, axis=1) >= 1)


@pytest.mark.parametrize("seed", range(10))
def test_each_node_has_at_least_k_neighbours(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 6))
    g = random_graph(rng, 15, 4, k=k)
    assert np.all(np.sum(g.weights > 0, axis=1) >= min(k, len(g) - 1))


@pytest.mark.parametrize("seed", range(10))
def test_edges_do_not_depend_on_insertion_order(seed):
    rng = np.random.default_rng(seed)
    anchors = rng.uniform(0, 100, (12, 2))
    ids = np.arange(12)
    W = knn_weights(anchors, ids, 3)
    perm = rng.permutation(12)
    Wp = knn_weights(anchors[perm], ids[perm], 3)
    np.testing.assert_array_equal(Wp, W[np.ix_(perm, perm)])


# -- kernel vectors ----------------------------------------------------------------


def test_kernel_vector_hand_example():
    g = make_graph(
        [[0, 0], [10, 0], [0, 20]],
        [[1.0, 0.0], [1.0, 0.0], [0.5, 0.5]],
        ["chair", "table"],
        [(0, 1, 10.0), (0, 2, 20.0)],
    )
    np.testing.assert_allclose(kernel_vector(g, 0), [2 / math.sqrt(5), 1 / math.sqrt(5)], atol=1e-12)


def test_kernel_vector_isolated_root_is_zero():
    g = make_graph([[0, 0], [1, 1]], [[1.0, 0.0], [0.0, 1.0]], ["chair", "table"], [])
    np.testing.assert_array_equal(kernel_vector(g, 0), [0.0, 0.0])


@pytest.mark.parametrize("w", [0.001, 1.0, 1e4])
def test_single_neighbour_gives_its_label(w):
    g = make_graph([[0, 0], [1, 1]], [[1.0, 0.0], [0.0, 0.7]], ["chair", "table"], [(0, 1, w)])
    np.testing.assert_allclose(kernel_vector(g, 0), [0.0, 1.0], atol=1e-15)


def test_kernel_vector_unknown_node():
    g = make_graph([[0, 0]], [[1.0]], ["chair"], [])
    with pytest.raises(UnknownNode):
        kernel_vector(g, 42)


@pytest.mark.parametrize("seed", range(25))
def test_kernel_vector_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, int(rng.integers(1, 21)), int(rng.integers(1, 11)))
    for n in g.nodes:
        v = kernel_vector(g, n.id)
        np.testing.assert_allclose(v, brute_force_kernel(g, n.id), atol=1e-12, rtol=0)
        assert np.all(v >= 0)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-9) or not np.any(v)


def test_inverse_distance_option():
    g = make_graph(
        [[0, 0], [10, 0], [0, 20]],
        [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        ["chair", "table"],
        [(0, 1, 10.0), (0, 2, 20.0)],
    )
    np.testing.assert_allclose(kernel_vector(g, 0, inverse_distance=True), np.array([0.1, 0.05]) / math.hypot(0.1, 0.05))


@pytest.mark.parametrize("lam", [0.01, 100.0])
def test_kernel_vectors_are_weight_scale_invariant(lam):
    rng = np.random.default_rng(9)
    g = random_graph(rng, 15, 6, k=3)
    scaled = SceneGraph(g.nodes, g.weights * lam, g.kind, g.categories)
    np.testing.assert_allclose(scaled.kernel_matrix(), g.kernel_matrix(), atol=1e-12, rtol=0)


# -- node distance ----------------------------------------------------------------


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ([0.6, 0.8], [0.6, 0.8], 0.0),
        ([1.0, 0.0], [0.0, 1.0], 1.0),
        ([1 / math.sqrt(2), 1 / math.sqrt(2)], [1.0, 0.0], 1 - 1 / math.sqrt(2)),
        ([0.0, 0.0], [1.0, 0.0], 1.0),
    ],
)
def test_node_distance(a, b, expected):
    assert node_distance(a, b) == pytest.approx(expected, abs=1e-12)


@given(
    st.lists(st.floats(0, 10), min_size=4, max_size=4),
    st.lists(st.floats(0, 10), min_size=4, max_size=4),
)
def test_node_distance_in_unit_interval(a, b):
    d = node_distance(a, b)
    assert 0.0 <= d <= 1.0
    assert node_distance_matrix(a, b)[0, 0] == pytest.approx(d, abs=1e-12)


# -- detection filtering -------------------------------------------------------------


def test_filter_drops_low_confidence():
    assert filter_detections([det(0, 0, score=0.05)]) == []
    assert filter_detections([det(0, 0, score=0.1)]) == []


def test_filter_keeps_higher_score_of_duplicates():
    a, b = det(50, 50, score=0.8), det(50, 50, score=0.9)
    assert filter_detections([a, b]) == [b]


def test_filter_keeps_disjoint_boxes():
    a, b = det(0, 0, score=0.5), det(100, 100, score=0.5)
    assert filter_detections([a, b]) == [a, b]


def test_filter_min_area_overlap():
    big = Detection((0, 0, 100, 100), "chair", 0.9)
    inner = Detection((10, 10, 30, 30), "chair", 0.8)
    assert filter_detections([big, inner]) == [big, inner]
    assert filter_detections([big, inner], overlap="min-area") == [big]


def test_hop_distances():
    g = make_graph([[0, 0]] * 4, [[1.0]] * 4, ["chair"], [(0, 1, 1.0), (1, 2, 1.0)])
    H = g.hop_distances()
    assert H[0, 2] == 2 and H[0, 1] == 1 and H[0, 0] == 0
    assert np.isinf(H[0, 3])

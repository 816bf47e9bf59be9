"""Frame and map object graphs, graph-kernel node descriptors and their
cosine distance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .exceptions import UnknownNode
from .geometry import box_iou
from .semantics import CategorySet, Detection, ObjectLandmark, detection_distribution, mode_label

DEFAULT_K = 5


@dataclass(frozen=True, eq=False)
class GraphNode:
    id: int
    anchor: np.ndarray
    distribution: np.ndarray
    label: str
    payload: Any = None


class SceneGraph:
    """Undirected KNN graph over detections (``kind="frame"``, pixel weights)
    or map objects (``kind="map"``, metric weights).

    ``weights[i, j]`` holds the edge weight between the i-th and j-th node
    (positional indices, not ids); zero means no edge.
    """

    def __init__(self, nodes: Sequence[GraphNode], weights, kind: str, categories: CategorySet):
        self.nodes = tuple(nodes)
        self.weights = np.array(weights, dtype=float).reshape(len(self.nodes), len(self.nodes))
        self.weights.setflags(write=False)
        self.kind = kind
        self.categories = categories
        self._pos = {n.id: i for i, n in enumerate(self.nodes)}
        if len(self._pos) != len(self.nodes):
            raise ValueError("duplicate node ids")
        self._kernels = {}
        self._hops = None

    def __len__(self):
        return len(self.nodes)

    @property
    def ids(self):
        return [n.id for n in self.nodes]

    def position(self, node_id) -> int:
        try:
            return self._pos[node_id]
        except KeyError:
            raise UnknownNode(f"node {node_id!r} not in {self.kind} graph") from None

    def node(self, node_id) -> GraphNode:
        return self.nodes[self.position(node_id)]

    def neighbors(self, node_id) -> dict:
        i = self.position(node_id)
        return {self.nodes[j].id: float(self.weights[i, j]) for j in np.flatnonzero(self.weights[i])}

    def edges(self):
        """Undirected edges ``(id_a, id_b, w)`` with ``a`` before ``b`` in node order."""
        ii, jj = np.nonzero(np.triu(self.weights))
        return [(self.nodes[i].id, self.nodes[j].id, float(self.weights[i, j])) for i, j in zip(ii, jj)]

    @property
    def distributions(self):
        if not self.nodes:
            return np.zeros((0, len(self.categories)))
        return np.stack([n.distribution for n in self.nodes])

    def kernel_matrix(self, inverse_distance=False):
        """Kernel vectors for every node, one row per node in node order."""
        if inverse_distance not in self._kernels:
            W = self.weights
            if inverse_distance:
                with np.errstate(divide="ignore"):
                    W = np.where(W > 0, 1.0 / W, 0.0)
            V = W @ self.distributions
            norms = np.linalg.norm(V, axis=1, keepdims=True)
            V = np.divide(V, norms, out=np.zeros_like(V), where=norms > 0)
            V.setflags(write=False)
            self._kernels[inverse_distance] = V
        return self._kernels[inverse_distance]

    def hop_distances(self):
        """All-pairs hop counts (unweighted BFS); ``inf`` when disconnected."""
        if self._hops is None:
            n = len(self.nodes)
            adj = self.weights > 0
            H = np.full((n, n), np.inf)
            for s in range(n):
                H[s, s] = 0
                frontier = np.zeros(n, dtype=bool)
                frontier[s] = True
                seen = frontier.copy()
                d = 0
                while frontier.any():
                    d += 1
                    frontier = adj[frontier].any(axis=0) & ~seen
                    H[s, frontier] = d
                    seen |= frontier
            H.setflags(write=False)
            self._hops = H
        return self._hops


def filter_detections(
    raw: Sequence[Detection],
    score_threshold=0.1,
    overlap_threshold=0.6,
    overlap="iou",
) -> list[Detection]:
    """Drop low-confidence detections, then suppress overlapping boxes greedily
    by descending score. ``overlap`` is ``"iou"`` or ``"min-area"`` (intersection
    over the smaller box)."""
    kept_idx = [i for i, d in enumerate(raw) if d.score > score_threshold]
    order = sorted(kept_idx, key=lambda i: (-raw[i].score, i))
    boxes = np.array([raw[i].bbox for i in order], dtype=float).reshape(-1, 4)
    ov = _overlap(boxes[:, None], boxes[None], overlap)
    keep = np.zeros(len(order), dtype=bool)
    for a in range(len(order)):
        keep[a] = not np.any(ov[a, keep] > overlap_threshold)
    return [raw[i] for i in sorted(o for o, k in zip(order, keep) if k)]


def _overlap(a, b, mode):
    """Pairwise overlap of broadcast box arrays."""
    if mode == "iou":
        return box_iou(a, b)
    if mode == "min-area":
        iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
        ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
        area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
        area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
        return iw * ih / np.minimum(area_a, area_b)
    raise ValueError(f"unknown overlap mode {mode!r}")


def knn_weights(anchors, ids, k: int):
    """Symmetric KNN adjacency with Euclidean edge weights.

    Each node picks its ``k`` nearest others (ties: lower id); the union of the
    directed picks becomes the undirected edge set.
    """
    anchors = np.asarray(anchors, dtype=float)
    n = len(anchors)
    W = np.zeros((n, n))
    if n < 2 or k <= 0:
        return W
    diff = anchors[:, None, :] - anchors[None, :, :]
    D = np.sqrt(np.sum(diff * diff, axis=-1))
    ids = np.asarray(ids)
    for i in range(n):
        others = np.array([j for j in range(n) if j != i])
        order = others[np.lexsort((ids[others], D[i, others]))]
        for j in order[:k]:
            W[i, j] = W[j, i] = D[i, j]
    return W


def build_frame_graph(dets: Sequence[Detection], cats: CategorySet, k: int = DEFAULT_K) -> SceneGraph:
    nodes = [
        GraphNode(i, np.asarray(d.center, dtype=float), detection_distribution(d, cats), d.label, d)
        for i, d in enumerate(dets)
    ]
    anchors = np.array([n.anchor for n in nodes]).reshape(len(nodes), 2)
    return SceneGraph(nodes, knn_weights(anchors, [n.id for n in nodes], k), "frame", cats)


def build_map_graph(objects: Sequence[ObjectLandmark], cats: CategorySet, k: int = DEFAULT_K) -> SceneGraph:
    nodes = [
        GraphNode(o.id, np.asarray(o.position, dtype=float), o.distribution, mode_label(o.distribution, cats), o)
        for o in objects
    ]
    anchors = np.array([n.anchor for n in nodes]).reshape(len(nodes), 3)
    return SceneGraph(nodes, knn_weights(anchors, [n.id for n in nodes], k), "map", cats)


def kernel_vector(g: SceneGraph, root, inverse_distance=False) -> np.ndarray:
    """Neighbour category mass accumulated by edge weight, L2-normalised.

    The root's own category does not enter its descriptor. Isolated nodes get
    the zero vector.
    """
    return g.kernel_matrix(inverse_distance)[g.position(root)].copy()


def node_distance(a, b) -> float:
    """Cosine distance in ``[0, 1]``; 1.0 when either vector is zero."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    return float(np.clip(1.0 - a @ b / (na * nb), 0.0, 1.0))


def node_distance_matrix(A, B):
    """Pairwise cosine distances between rows of ``A`` and ``B``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    denom = np.outer(na, nb)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.where(denom > 0, (A @ B.T) / denom, 0.0)
    return np.clip(1.0 - cos, 0.0, 1.0)

"""scikit-learn style front end for object-level relocalization.

>>> reloc = ObjectRelocalizer(intrinsics="500,500,320,240,640,480").fit(object_map)
>>> results = reloc.predict([frame.detections for frame in frames])
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .association import (
    AssociationSet,
    Match,
    RansacParams,
    build_label_index,
    frame_candidates,
    none_graph_candidates,
    random_walk_descriptors,
    ransac_relocalize,
    reassign,
)
from .exceptions import GorelocError
from .geometry import PoseSE3
from .graph import build_frame_graph, build_map_graph, filter_detections
from .pose import RefinementConfig, build_alignment_cost, optimize_pose
from .validation import BASELINES, check_choice, check_detections, check_intrinsics, check_object_map

STAGES = ("frame_processing", "graph_generation", "subgraph_extraction", "refinement")


@dataclass
class FrameResult:
    status: str
    pose: PoseSE3 | None = None
    initial_pose: PoseSE3 | None = None
    associations: AssociationSet = field(default_factory=AssociationSet)
    num_inliers: int = 0
    error: str | None = None
    kept: list = field(default_factory=list)
    candidates: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status == "ok"


class ObjectRelocalizer(BaseEstimator):
    """Relocalize camera frames against an object map.

    ``fit`` builds the map graph, its descriptors and the label index.
    ``predict`` takes one list of detections per frame and returns a
    :class:`FrameResult` per frame. ``transform`` returns the frame-graph
    descriptors used for candidate retrieval.

    ``baseline`` selects how candidates are found: ``"graph"`` (kernel
    descriptors, top ``j``), ``"none-graph"`` (every object with the same
    label) or ``"random-walk"`` (label histograms of random walks, top ``j``).
    """

    def __init__(
        self,
        intrinsics="500,500,320,240,640,480",
        k=5,
        j=5,
        num=3,
        max_iter=50,
        inlier_px=40.0,
        max_hops=2,
        baseline="graph",
        walk_steps=5,
        walks=20,
        inverse_distance=False,
        refine=True,
        refine_max_iter=20,
        robust_scale=None,
        reassociate=True,
        score_threshold=0.1,
        overlap_threshold=0.6,
        overlap="iou",
        random_state=0,
    ):
        self.intrinsics = intrinsics
        self.k = k
        self.j = j
        self.num = num
        self.max_iter = max_iter
        self.inlier_px = inlier_px
        self.max_hops = max_hops
        self.baseline = baseline
        self.walk_steps = walk_steps
        self.walks = walks
        self.inverse_distance = inverse_distance
        self.refine = refine
        self.refine_max_iter = refine_max_iter
        self.robust_scale = robust_scale
        self.reassociate = reassociate
        self.score_threshold = score_threshold
        self.overlap_threshold = overlap_threshold
        self.overlap = overlap
        self.random_state = random_state

    def fit(self, X, y=None):
        check_choice("baseline", self.baseline, BASELINES)
        cats, objects = check_object_map(X)
        self.intrinsics_ = check_intrinsics(self.intrinsics)
        self.categories_ = cats
        self.objects_ = {o.id: o for o in objects}
        self.map_graph_ = build_map_graph(objects, cats, self.k)
        if self.baseline == "random-walk":
            self.map_descriptors_ = random_walk_descriptors(
                self.map_graph_, self.walk_steps, self.walks, [self.random_state, 0]
            )
        else:
            self.map_descriptors_ = self.map_graph_.kernel_matrix(self.inverse_distance)
        self.label_index_ = build_label_index(self.map_graph_, self.map_descriptors_)
        self.ransac_params_ = RansacParams(self.num, self.max_iter, self.inlier_px, self.random_state, self.max_hops)
        self.refinement_config_ = RefinementConfig(max_iterations=self.refine_max_iter, robust_scale=self.robust_scale)
        return self

    # -- per-frame stages ------------------------------------------------

    def _frame_graph(self, dets, frame_index):
        graph = build_frame_graph(dets, self.categories_, self.k)
        if self.baseline == "random-walk":
            desc = random_walk_descriptors(graph, self.walk_steps, self.walks, [self.random_state, 1, frame_index])
        else:
            desc = graph.kernel_matrix(self.inverse_distance)
        return graph, desc

    def _candidates(self, graph, desc):
        if self.baseline == "none-graph":
            return {
                n.id: [(m, float("nan")) for m in none_graph_candidates(n.label, self.map_graph_)]
                for n in graph.nodes
            }
        return frame_candidates(graph, self.label_index_, self.j, desc)

    def _refine(self, assoc, dets, pose):
        problem = build_alignment_cost(assoc, self.objects_, dets, self.intrinsics_, self.categories_)
        return optimize_pose(problem, pose, self.refinement_config_).pose

    def _reassociate(self, graph, cands, dets, pose, assoc, count, rounds=2):
        """Re-run the candidate assignment under the refined pose and refine
        again until the inlier set settles.

        Nearby objects of one label can swap under the coarse sample pose,
        sometimes gaining an inlier by doing so; the refined pose is fitted to
        full ellipses and usually separates them, so its assignment is kept
        as long as it still has ``num`` inliers.
        """
        for _ in range(rounds):
            new_count, new_assoc = reassign(graph, self.map_graph_, cands, self.intrinsics_, pose, self.inlier_px)
            if new_count < self.num or new_assoc.pairs() == assoc.pairs():
                break
            pose = self._refine(new_assoc, dets, pose)
            assoc, count = new_assoc, new_count
        return pose, assoc, count

    def relocalize(self, detections, frame_index=0) -> FrameResult:
        check_is_fitted(self, "map_graph_")
        timings = {}
        t0 = time.perf_counter()
        raw = check_detections(detections, self.categories_)
        dets = filter_detections(raw, self.score_threshold, self.overlap_threshold, self.overlap)
        kept = [next(i for i, r in enumerate(raw) if r is d) for d in dets]
        t1 = time.perf_counter()
        graph, desc = self._frame_graph(dets, frame_index)
        t2 = time.perf_counter()
        cands = self._candidates(graph, desc)
        t3 = time.perf_counter()
        timings.update(frame_processing=t1 - t0, graph_generation=t2 - t1, subgraph_extraction=t3 - t2)
        result = FrameResult("failed", kept=kept, candidates={kept[f]: c for f, c in cands.items()}, timings=timings)
        params = RansacParams(
            self.num, self.max_iter, self.inlier_px, [self.random_state, 2, frame_index], self.max_hops
        )
        try:
            found = ransac_relocalize(graph, self.map_graph_, cands, self.intrinsics_, params)
            pose, assoc, count = found.pose, found.associations, found.num_inliers
            if self.refine:
                pose = self._refine(assoc, dets, pose)
                if self.reassociate:
                    pose, assoc, count = self._reassociate(graph, cands, dets, pose, assoc, count)
        except GorelocError as exc:
            result.error = f"{type(exc).__name__}: {exc}"
        else:
            result.status = "ok"
            result.pose = pose
            result.initial_pose = found.pose
            result.num_inliers = count
            result.associations = AssociationSet(
                [Match(kept[m.frame_id], m.map_id, m.inlier, m.error) for m in assoc]
            )
        timings["refinement"] = time.perf_counter() - t3
        return result

    def predict(self, X):
        return [self.relocalize(dets, i) for i, dets in enumerate(X)]

    def transform(self, X):
        """Frame-graph descriptors, one ``(n_detections_kept, n_categories)`` array per frame."""
        check_is_fitted(self, "map_graph_")
        out = []
        for i, dets in enumerate(X):
            dets = filter_detections(
                check_detections(dets, self.categories_), self.score_threshold, self.overlap_threshold, self.overlap
            )
            out.append(np.array(self._frame_graph(dets, i)[1]))
        return out

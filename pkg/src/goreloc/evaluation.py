"""Association metrics (accuracy, centre distance, IoU) and relocalization
metrics (success rate under translation thresholds, mean error of the best
fraction of frames)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .association import AssociationSet, Match
from .exceptions import NoGroundTruth
from .geometry import CameraIntrinsics, PoseSE3, box_iou, ellipse_bboxes, project_quadrics_batch
from .semantics import Detection, ObjectLandmark

GT_IOU_FLOOR = 0.1
MAX_TIME_GAP = 0.05


@dataclass
class AssociationMetrics:
    accuracy: float
    center_distance: float
    iou: float
    matched: int
    total: int
    empty_prediction: bool = False

    def as_dict(self):
        return {
            "accuracy": self.accuracy,
            "center_distance": self.center_distance,
            "iou": self.iou,
            "matched": self.matched,
            "total": self.total,
            "empty_prediction": self.empty_prediction,
        }


@dataclass
class PoseMetrics:
    success_rate: dict
    te_percentile: dict
    translation_errors: list = field(default_factory=list)
    frames: int = 0
    failures: int = 0

    def as_dict(self):
        return {
            "success_rate": {str(k): v for k, v in self.success_rate.items()},
            "te_percentile": {str(k): v for k, v in self.te_percentile.items()},
            "frames": self.frames,
            "failures": self.failures,
        }


def project_objects(objects: Sequence[ObjectLandmark], T: PoseSE3, K: CameraIntrinsics):
    """Projected ellipse centre, bbox and visibility of every object under ``T``."""
    if not objects:
        return np.zeros((0, 2)), np.zeros((0, 4)), np.zeros(0, dtype=bool)
    Q = np.stack([o.quadric.matrix() for o in objects])
    mu, S, ok = project_quadrics_batch(Q, T.rotation, T.translation, K)
    S = np.where(ok[:, None, None], S, np.eye(2))
    return mu, ellipse_bboxes(mu, S), ok


def ground_truth_associations(
    dets: Sequence[Detection],
    objects: Sequence[ObjectLandmark],
    T_gt: PoseSE3,
    K: CameraIntrinsics,
    iou_floor=GT_IOU_FLOOR,
) -> AssociationSet:
    """Match detections to projected objects by descending box IoU (> floor),
    each detection and object used at most once."""
    _, boxes, ok = project_objects(objects, T_gt, K)
    pairs = []
    for j, d in enumerate(dets):
        for i in np.flatnonzero(ok):
            iou = float(box_iou(np.array(d.bbox), boxes[i]))
            if iou > iou_floor:
                pairs.append((-iou, j, objects[i].id))
    pairs.sort()
    used_d, used_o, matches = set(), set(), []
    for neg_iou, j, oid in pairs:
        if j in used_d or oid in used_o:
            continue
        used_d.add(j)
        used_o.add(oid)
        matches.append(Match(j, oid, True, -neg_iou))
    matches.sort(key=lambda m: m.frame_id)
    return AssociationSet(matches)


def association_metrics(
    pred: AssociationSet,
    gt: AssociationSet,
    dets: Sequence[Detection],
    objects: Sequence[ObjectLandmark],
    T_gt: PoseSE3,
    K: CameraIntrinsics,
) -> AssociationMetrics:
    """Accuracy is the share of predicted inlier pairs that appear in ``gt``.

    Centre distance and IoU compare each predicted detection box with the
    ground-truth projection of the object it was matched to. An empty
    prediction reports zeros and sets ``empty_prediction``.
    """
    pred_pairs = sorted(pred.pairs())
    gt_pairs = gt.pairs()
    if not pred_pairs:
        return AssociationMetrics(0.0, 0.0, 0.0, 0, 0, empty_prediction=True)
    mu, boxes, ok = project_objects(objects, T_gt, K)
    row = {o.id: i for i, o in enumerate(objects)}
    correct = sum(p in gt_pairs for p in pred_pairs)
    cds, ious = [], []
    for j, oid in pred_pairs:
        i = row[oid]
        if not ok[i]:
            continue
        box = np.array(dets[j].bbox)
        cds.append(float(np.linalg.norm((box[:2] + box[2:]) / 2 - mu[i])))
        ious.append(float(box_iou(box, boxes[i])))
    return AssociationMetrics(
        accuracy=100.0 * correct / len(pred_pairs),
        center_distance=float(np.mean(cds)) if cds else math.inf,
        iou=float(np.mean(ious)) if ious else 0.0,
        matched=correct,
        total=len(pred_pairs),
    )


class Trajectory:
    """Timestamped camera poses (camera-to-world, as in TUM files)."""

    def __init__(self, timestamps, poses: Sequence[PoseSE3]):
        self.timestamps = np.asarray(timestamps, dtype=float)
        self.poses = list(poses)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses differ in length")
        order = np.argsort(self.timestamps, kind="stable")
        self.timestamps = self.timestamps[order]
        self.poses = [self.poses[i] for i in order]

    def __len__(self):
        return len(self.poses)

    def lookup(self, timestamp, max_gap=MAX_TIME_GAP) -> PoseSE3:
        if len(self.timestamps) == 0:
            raise NoGroundTruth("empty trajectory")
        k = int(np.searchsorted(self.timestamps, timestamp))
        best = min(
            (i for i in (k - 1, k) if 0 <= i < len(self.timestamps)),
            key=lambda i: (abs(self.timestamps[i] - timestamp), i),
        )
        if abs(self.timestamps[best] - timestamp) > max_gap:
            raise NoGroundTruth(f"no ground-truth pose within {max_gap}s of t={timestamp}")
        return self.poses[best]


def pose_metrics(
    estimates,
    gt: Trajectory,
    thresholds=(2.0, 5.0),
    fractions=(0.1, 0.2),
    max_gap=MAX_TIME_GAP,
) -> PoseMetrics:
    """Relocalization success and translation-error statistics.

    ``estimates`` holds ``(timestamp, pose_or_None)`` with poses mapping map
    coordinates to the camera. Failures count against every success rate and
    are left out of the percentile means; the percentile for fraction ``f``
    is the mean error of the best ``ceil(f * n)`` successful frames.
    """
    estimates = list(estimates)
    errors = []
    failures = 0
    for ts, pose in estimates:
        gt_pose = gt.lookup(ts, max_gap)  # raises before anything is aggregated
        if pose is None:
            failures += 1
            continue
        errors.append(float(np.linalg.norm(pose.camera_center - gt_pose.translation)))
    n = len(estimates)
    errs = np.sort(np.array(errors))
    success = {float(a): (100.0 * np.sum(errs < a) / n if n else 0.0) for a in sorted(thresholds)}
    pct = {}
    for f in sorted(fractions):
        if len(errs) == 0:
            pct[float(f)] = None
        else:
            k = max(1, math.ceil(f * len(errs)))
            pct[float(f)] = float(np.mean(errs[:k]))
    return PoseMetrics(success, pct, errors, n, failures)

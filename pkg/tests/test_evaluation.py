import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goreloc.association import AssociationSet, Match
from goreloc.evaluation import (
    Trajectory,
    association_metrics,
    ground_truth_associations,
    pose_metrics,
    project_objects,
)
from goreloc.exceptions import NoGroundTruth
from goreloc.geometry import PoseSE3
from goreloc.semantics import Detection


@pytest.fixture(scope="module")
def view(small_scene):
    k = 1
    return small_scene, small_scene.frames[k].detections, small_scene.world_to_camera(k)


def truth(dets):
    return AssociationSet([Match(j, d.object_id, True, 0.0) for j, d in enumerate(dets)])


# -- ground truth by projection ------------------------------------------------------


def test_exact_boxes_match_their_objects(view):
    scene, dets, T = view
    gt = ground_truth_associations(dets, scene.objects, T, scene.intrinsics)
    assert gt.pairs() == truth(dets).pairs()
    assert all(m.error == pytest.approx(1.0) for m in gt.matches)


def test_detection_far_from_everything_is_unmatched(view):
    scene, dets, T = view
    _, boxes, ok = project_objects(scene.objects, T, scene.intrinsics)
    # a tiny box in whichever image corner no projected box touches
    corners = [(0, 0, 2, 2), (638, 0, 640, 2), (0, 478, 2, 480), (638, 478, 640, 480)]
    box = next(c for c in corners if not any(
        b[0] < c[2] and c[0] < b[2] and b[1] < c[3] and c[1] < b[3] for b in boxes[ok]
    ))
    gt = ground_truth_associations([Detection(box, "person", 0.9)], scene.objects, T, scene.intrinsics)
    assert gt.matches == []


def test_two_detections_on_one_object_higher_iou_wins(view):
    scene, dets, T = view
    d = dets[0]
    x0, y0, x1, y1 = d.bbox
    shifted = Detection((x0 + 0.2 * (x1 - x0), y0, x1 + 0.2 * (x1 - x0), y1), d.label, 0.9)
    gt = ground_truth_associations([shifted, d], scene.objects, T, scene.intrinsics)
    owners = {m.map_id: m.frame_id for m in gt.matches}
    assert owners[d.object_id] == 1
    assert len(set(owners)) == len(owners)


def test_empty_scene_gives_empty_truth(view):
    scene, _, T = view
    assert ground_truth_associations([], scene.objects, T, scene.intrinsics).matches == []
    assert ground_truth_associations([Detection((0, 0, 5, 5), "a", 0.5)], [], T, scene.intrinsics).matches == []


# -- association metrics -------------------------------------------------------------


def test_perfect_prediction(view):
    scene, dets, T = view
    gt = truth(dets)
    m = association_metrics(gt, gt, dets, scene.objects, T, scene.intrinsics)
    assert m.accuracy == 100.0
    assert m.center_distance == pytest.approx(0.0, abs=1e-9)
    assert m.iou == pytest.approx(1.0, abs=1e-12)
    assert (m.matched, m.total) == (len(dets), len(dets))


def test_all_wrong_is_zero(view):
    scene, dets, T = view
    ids = [d.object_id for d in dets]
    rotated = AssociationSet([Match(j, ids[(j + 1) % len(ids)], True, 0.0) for j in range(len(dets))])
    m = association_metrics(rotated, truth(dets), dets, scene.objects, T, scene.intrinsics)
    assert m.accuracy == 0.0 and m.matched == 0
    assert m.center_distance > 0 and 0 <= m.iou < 1


def test_accuracy_uses_predicted_pairs_as_denominator(view):
    scene, dets, T = view
    half = AssociationSet(truth(dets).matches[:2])
    m = association_metrics(half, truth(dets), dets, scene.objects, T, scene.intrinsics)
    assert m.accuracy == 100.0 and m.total == 2


def test_outliers_do_not_count(view):
    scene, dets, T = view
    pred = AssociationSet(truth(dets).matches[:2] + [Match(2, dets[0].object_id, False, 99.0)])
    assert association_metrics(pred, truth(dets), dets, scene.objects, T, scene.intrinsics).total == 2


def test_empty_prediction_is_flagged(view):
    scene, dets, T = view
    m = association_metrics(AssociationSet([]), truth(dets), dets, scene.objects, T, scene.intrinsics)
    assert m.empty_prediction and m.accuracy == 0.0


# -- pose metrics --------------------------------------------------------------------


def trajectory(n):
    poses = [PoseSE3(np.eye(3), [float(i), 0.0, 0.0]) for i in range(n)]
    return Trajectory([0.1 * i for i in range(n)], poses)


def estimate(traj, i, offset):
    """World-to-camera estimate whose camera centre is ``offset`` metres off."""
    T_wc = traj.poses[i]
    return PoseSE3(np.eye(3), T_wc.translation + [0.0, offset, 0.0]).inverse()


def test_exact_estimates():
    traj = trajectory(5)
    pm = pose_metrics([(traj.timestamps[i], estimate(traj, i, 0.0)) for i in range(5)], traj)
    assert pm.success_rate == {2.0: 100.0, 5.0: 100.0}
    assert pm.te_percentile == {0.1: 0.0, 0.2: 0.0}


def test_all_failures():
    traj = trajectory(3)
    pm = pose_metrics([(t, None) for t in traj.timestamps], traj)
    assert pm.success_rate == {2.0: 0.0, 5.0: 0.0}
    assert pm.te_percentile == {0.1: None, 0.2: None}
    assert pm.failures == 3


def test_failures_count_against_success_only():
    traj = trajectory(4)
    est = [(traj.timestamps[0], estimate(traj, 0, 1.0)), (traj.timestamps[1], estimate(traj, 1, 3.0))]
    est += [(traj.timestamps[2], None), (traj.timestamps[3], None)]
    pm = pose_metrics(est, traj, fractions=(0.5, 1.0))
    assert pm.success_rate == {2.0: 25.0, 5.0: 50.0}
    assert pm.te_percentile[0.5] == pytest.approx(1.0)
    assert pm.te_percentile[1.0] == pytest.approx(2.0)


def test_percentile_takes_ceiling():
    traj = trajectory(10)
    est = [(traj.timestamps[i], estimate(traj, i, float(i + 1))) for i in range(10)]
    pm = pose_metrics(est, traj, fractions=(0.15,))
    assert pm.te_percentile[0.15] == pytest.approx(1.5)  # mean of best ceil(1.5) = 2


def test_nearest_timestamp_lookup():
    traj = trajectory(3)
    assert traj.lookup(0.12) is traj.poses[1]
    assert traj.lookup(0.149) is traj.poses[1]
    with pytest.raises(NoGroundTruth):
        traj.lookup(0.5)
    with pytest.raises(NoGroundTruth):
        pose_metrics([(9.0, None)], traj)


@settings(max_examples=50)
@given(st.lists(st.one_of(st.none(), st.floats(0, 10)), min_size=1, max_size=20), st.randoms(use_true_random=False))
def test_pose_metric_orderings(offsets, rnd):
    traj = trajectory(len(offsets))
    est = [(traj.timestamps[i], None if o is None else estimate(traj, i, o)) for i, o in enumerate(offsets)]
    pm = pose_metrics(est, traj, thresholds=(0.5, 1, 2, 5), fractions=(0.1, 0.2, 0.5))
    rates = list(pm.success_rate.values())
    assert rates == sorted(rates)
    pct = [v for v in pm.te_percentile.values() if v is not None]
    assert all(a <= b + 1e-12 for a, b in zip(pct, pct[1:]))
    shuffled = list(est)
    rnd.shuffle(shuffled)
    again = pose_metrics(shuffled, traj, thresholds=(0.5, 1, 2, 5), fractions=(0.1, 0.2, 0.5))
    assert again.success_rate == pm.success_rate
    for f, v in pm.te_percentile.items():
        assert (v is None and again.te_percentile[f] is None) or math.isclose(v, again.te_percentile[f], abs_tol=1e-12)

import json

import numpy as np
import pytest

from goreloc.exceptions import InvariantViolation, ParseError
from goreloc.geometry import DualQuadric, PoseSE3, so3_exp
from goreloc.io import (
    Frame,
    load_detections,
    load_map,
    load_report,
    load_trajectory,
    save_detections,
    save_map,
    save_trajectory,
)
from goreloc.semantics import CategorySet, Detection, ObjectLandmark

HEADER = {"format": "goreloc-map", "version": 1}


def write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return p


def one_object(**overrides):
    entry = {
        "id": 0,
        "position": [1.0, 2.0, 0.5],
        "orientation": [1.0, 0.0, 0.0, 0.0],
        "semi_axes": [0.2, 0.3, 0.4],
        "distribution": [{"category": "chair", "p": 1.0}],
    }
    entry.update(overrides)
    return {"header": HEADER, "categories": ["chair", "vase"], "objects": [entry]}


# -- maps ----------------------------------------------------------------------------


def test_minimal_map_round_trips(tmp_path):
    cats, objs = load_map(write(tmp_path, "m.json", one_object()))
    assert list(cats) == ["chair", "vase"] and len(objs) == 1
    save_map(tmp_path / "again.json", cats, objs)
    cats2, objs2 = load_map(tmp_path / "again.json")
    np.testing.assert_allclose(objs2[0].quadric.matrix(), objs[0].quadric.matrix(), atol=1e-12)
    np.testing.assert_array_equal(objs2[0].distribution, [1.0, 0.0])


def test_random_map_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    cats = CategorySet(["a", "b", "c"])
    objs = []
    for i in range(6):
        q = rng.normal(size=4)
        quad = DualQuadric(rng.normal(size=3), q / np.linalg.norm(q), rng.uniform(0.1, 1, 3))
        p = rng.dirichlet(np.ones(3))
        objs.append(ObjectLandmark(i * 3, quad, p))
    save_map(tmp_path / "m.json", cats, objs)
    _, back = load_map(tmp_path / "m.json")
    for a, b in zip(objs, back):
        assert a.id == b.id
        np.testing.assert_allclose(b.quadric.position, a.quadric.position, atol=1e-12)
        np.testing.assert_allclose(b.quadric.orientation, a.quadric.orientation, atol=1e-12)
        np.testing.assert_allclose(b.quadric.semi_axes, a.quadric.semi_axes, atol=1e-12)
        np.testing.assert_allclose(b.distribution, a.distribution, atol=1e-12)


def test_observations_become_a_distribution(tmp_path):
    obs = [
        {"keyframe": 0, "label": "chair", "score": 0.9},
        {"keyframe": 3, "label": "chair", "score": 0.6},
        {"keyframe": 5, "label": "vase", "score": 0.5},
    ]
    doc = one_object(observations=obs)
    del doc["objects"][0]["distribution"]
    _, objs = load_map(write(tmp_path, "m.json", doc))
    np.testing.assert_allclose(objs[0].distribution, [0.75, 0.25], atol=1e-12)


@pytest.mark.parametrize(
    "overrides",
    [
        {"semi_axes": [0.2, 0.0, 0.4]},
        {"orientation": [1.0, 1.0, 0.0, 0.0]},
        {"distribution": [{"category": "chair", "p": 0.5}]},
        {"distribution": [{"category": "sofa", "p": 1.0}]},
    ],
)
def test_invariant_violations(tmp_path, overrides):
    with pytest.raises(InvariantViolation):
        load_map(write(tmp_path, "m.json", one_object(**overrides)))


def test_duplicate_ids(tmp_path):
    doc = one_object()
    doc["objects"].append(dict(doc["objects"][0]))
    with pytest.raises(InvariantViolation):
        load_map(write(tmp_path, "m.json", doc))


@pytest.mark.parametrize(
    "doc",
    [
        "{not json",
        {"categories": ["chair"], "objects": []},
        {"header": {"format": "other", "version": 1}, "categories": [], "objects": []},
        one_object(position=[1.0, 2.0]),
    ],
)
def test_malformed_maps(tmp_path, doc):
    with pytest.raises(ParseError):
        load_map(write(tmp_path, "m.json", doc))


def test_object_without_semantics(tmp_path):
    doc = one_object()
    del doc["objects"][0]["distribution"]
    with pytest.raises(ParseError, match="objects\\[0\\]"):
        load_map(write(tmp_path, "m.json", doc))


def test_parse_error_names_the_line(tmp_path):
    with pytest.raises(ParseError) as info:
        load_map(write(tmp_path, "m.json", '{\n"header": ,\n}'))
    assert ":2:" in str(info.value)


# -- detections ----------------------------------------------------------------------


DET_HEADER = {"format": "goreloc-detections", "version": 1, "image_size": [640, 480]}


def test_detections_round_trip_and_empty_frames(tmp_path):
    frames = [
        Frame(0, 0.0, [Detection((10, 20, 30, 40), "chair", 0.8, object_id=3)]),
        Frame(1, 0.5, []),
    ]
    save_detections(tmp_path / "d.json", frames, (640, 480))
    back = list(load_detections(tmp_path / "d.json"))
    assert [f.frame_id for f in back] == [0, 1]
    assert back[1].detections == []
    d = back[0].detections[0]
    assert d.bbox == (10, 20, 30, 40) and d.label == "chair" and d.object_id == 3


def test_out_of_order_timestamps(tmp_path):
    doc = {"header": DET_HEADER, "frames": [
        {"frame_id": 0, "timestamp": 1.0, "detections": []},
        {"frame_id": 1, "timestamp": 1.0, "detections": []},
    ]}
    frames = load_detections(write(tmp_path, "d.json", doc))
    next(frames)
    with pytest.raises(ParseError, match="timestamp"):
        next(frames)


def test_boxes_are_clamped_to_the_image(tmp_path):
    doc = {"header": DET_HEADER, "frames": [
        {"frame_id": 0, "timestamp": 0.0, "detections": [{"bbox": [-5, -1, 700, 100], "label": "a", "score": 0.5}]},
    ]}
    (frame,) = load_detections(write(tmp_path, "d.json", doc))
    assert frame.detections[0].bbox == (0.0, 0.0, 640.0, 100.0)


@pytest.mark.parametrize(
    "det",
    [
        {"bbox": [5, 5, 5, 10], "label": "a", "score": 0.5},
        {"bbox": [0, 0, 10, 10], "label": "a", "score": 1.5},
        {"bbox": [0, 0, 10], "label": "a", "score": 0.5},
        {"bbox": [0, 0, 10, 10], "score": 0.5},
    ],
)
def test_bad_detections(tmp_path, det):
    doc = {"header": DET_HEADER, "frames": [{"frame_id": 0, "timestamp": 0.0, "detections": [det]}]}
    with pytest.raises(ParseError):
        list(load_detections(write(tmp_path, "d.json", doc)))


# -- trajectories and reports --------------------------------------------------------


def test_tum_line_parses(tmp_path):
    p = write(tmp_path, "t.txt", "# comment\n1.5 1 2 3 0 0 0.7071067811865476 0.7071067811865476\n")
    traj = load_trajectory(p)
    assert traj.timestamps.tolist() == [1.5]
    T = traj.poses[0]
    np.testing.assert_allclose(T.translation, [1, 2, 3])
    np.testing.assert_allclose(T.rotation, so3_exp([0, 0, np.pi / 2]), atol=1e-12)


@pytest.mark.parametrize("line", ["1 2 3 4 5 6 7", "1 2 3 4 0 0 0 2", "1 2 3 4 x 0 0 1"])
def test_bad_tum_lines(tmp_path, line):
    with pytest.raises(ParseError, match=":1"):
        load_trajectory(write(tmp_path, "t.txt", line + "\n"))


def test_trajectory_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    poses = [PoseSE3(so3_exp(rng.normal(size=3)), rng.normal(size=3)) for _ in range(4)]
    save_trajectory(tmp_path / "t.txt", [0.0, 0.1, 0.2, 0.3], poses)
    back = load_trajectory(tmp_path / "t.txt")
    for a, b in zip(poses, back.poses):
        np.testing.assert_allclose(b.rotation, a.rotation, atol=1e-12)
        np.testing.assert_allclose(b.translation, a.translation, atol=1e-12)


def test_report_requires_header(tmp_path):
    with pytest.raises(ParseError):
        load_report(write(tmp_path, "r.json", {"frames": []}))
    doc = load_report(write(tmp_path, "r2.json", {"header": {"format": "goreloc-report", "version": 1}, "frames": []}))
    assert doc["frames"] == []

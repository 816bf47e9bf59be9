import numpy as np
import pytest

from goreloc.evaluation import project_objects
from goreloc.io import load_detections, load_map, load_trajectory
from goreloc.synth import SynthConfig, generate_synthetic, look_at


def test_noiseless_boxes_equal_projected_boxes(small_scene):
    for k, frame in enumerate(small_scene.frames):
        _, boxes, _ = project_objects(small_scene.objects, small_scene.world_to_camera(k), small_scene.intrinsics)
        for d in frame.detections:
            np.testing.assert_allclose(d.bbox, boxes[d.object_id], atol=1e-9)
            assert d.label == small_scene.labels[d.object_id]
            assert 0.5 <= d.score <= 1.0


def test_fixed_seed_gives_identical_files(tmp_path):
    cfg = SynthConfig(object_count=8, category_count=3, frame_count=4, sigma_center=2.0, flip_probability=0.2, seed=5)
    a = generate_synthetic(cfg).write(tmp_path / "a")
    b = generate_synthetic(cfg).write(tmp_path / "b")
    for name in ("map.json", "detections.json", "groundtruth.txt", "camera.txt", "synth_config.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_written_scene_loads_back(tmp_path):
    scene = generate_synthetic(SynthConfig(object_count=6, category_count=3, frame_count=3, seed=2))
    out = scene.write(tmp_path)
    cats, objs = load_map(out / "map.json")
    assert list(cats) == list(scene.categories) and len(objs) == 6
    frames = list(load_detections(out / "detections.json"))
    assert [len(f.detections) for f in frames] == [len(f.detections) for f in scene.frames]
    assert len(load_trajectory(out / "groundtruth.txt")) == 3


def test_full_flip_never_keeps_the_true_label():
    scene = generate_synthetic(SynthConfig(object_count=20, category_count=4, frame_count=5, flip_probability=1.0))
    dets = [d for f in scene.frames for d in f.detections]
    assert dets and all(d.label != scene.labels[d.object_id] for d in dets)


def test_single_category_cannot_flip():
    scene = generate_synthetic(SynthConfig(object_count=5, category_count=1, frame_count=2, flip_probability=1.0))
    assert all(d.label == "person" for f in scene.frames for d in f.detections)


def test_noise_keeps_geometry():
    base = SynthConfig(object_count=10, category_count=4, frame_count=3, seed=4)
    clean = generate_synthetic(base)
    noisy = generate_synthetic(SynthConfig(**{**base.__dict__, "sigma_center": 3.0}))
    for a, b in zip(clean.objects, noisy.objects):
        np.testing.assert_array_equal(a.quadric.matrix(), b.quadric.matrix())


def test_detections_lie_inside_the_image(small_scene):
    K = small_scene.intrinsics
    for f in small_scene.frames:
        for d in f.detections:
            x0, y0, x1, y1 = d.bbox
            assert 0 <= x0 < x1 <= K.width and 0 <= y0 < y1 <= K.height


def test_look_at_faces_the_target():
    T = look_at(np.array([5.0, 0.0, 1.0]), np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(T.rotation[:, 2], [-1, 0, 0], atol=1e-12)
    assert T.is_valid()


def test_clustered_layout():
    scene = generate_synthetic(SynthConfig(object_count=12, layout="clusters", cluster_count=3, cluster_labels=3))
    assert len(scene.objects) == 12


@pytest.mark.parametrize(
    "bad",
    [
        {"object_count": 0},
        {"flip_probability": 1.5},
        {"camera_path": "spiral"},
        {"layout": "grid"},
        {"sigma_center": -1.0},
    ],
)
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)


def test_unknown_config_keys():
    with pytest.raises(ValueError, match="unknown"):
        SynthConfig.from_dict({"objects": 3})

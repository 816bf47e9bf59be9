"""Synthetic object maps and detection streams with known ground truth.

Objects are ellipsoids placed in a box (world z up). A camera circles the
scene looking inwards; every frame renders the objects whose projected
ellipse lies fully inside the image as axis-aligned boxes, optionally with
centre/size noise and label flips.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, DualQuadric, PoseSE3, ellipse_bboxes, project_quadrics_batch
from .io import Frame, ObjectMap, save_detections, save_map, save_trajectory
from .semantics import COCO_CATEGORIES, CategorySet, Detection, ObjectLandmark, Observation

_WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SynthConfig:
    object_count: int = 30
    category_count: int = 10
    extent: float = 8.0
    height: float = 2.0
    frame_count: int = 50
    camera_path: str = "orbit"
    sigma_center: float = 0.0
    sigma_size: float = 0.0
    flip_probability: float = 0.0
    seed: int = 0
    intrinsics: str = "500,500,320,240,640,480"
    size_range: tuple = (0.15, 0.4)
    observations_range: tuple = (3, 8)
    map_label_noise: float = 0.0
    layout: str = "uniform"
    cluster_count: int = 3
    cluster_labels: int = 3
    cluster_radius: float = 0.8
    frame_interval: float = 0.1

    def __post_init__(self):
        if self.object_count < 1 or self.category_count < 1 or self.frame_count < 1:
            raise ValueError("counts must be >= 1")
        if not 1 <= self.category_count <= len(COCO_CATEGORIES):
            raise ValueError(f"category_count must be <= {len(COCO_CATEGORIES)}")
        for name in ("flip_probability", "map_label_noise"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.camera_path not in ("orbit", "random"):
            raise ValueError("camera_path must be 'orbit' or 'random'")
        if self.layout not in ("uniform", "clusters"):
            raise ValueError("layout must be 'uniform' or 'clusters'")
        if self.sigma_center < 0 or self.sigma_size < 0 or self.extent <= 0:
            raise ValueError("noise levels and extent must be non-negative/positive")
        object.__setattr__(self, "size_range", tuple(self.size_range))
        object.__setattr__(self, "observations_range", tuple(self.observations_range))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def camera(self):
        return CameraIntrinsics.from_string(self.intrinsics)


@dataclass
class SyntheticScene:
    config: SynthConfig
    categories: CategorySet
    objects: list
    frames: list
    timestamps: list
    camera_poses: list  # camera-to-world
    intrinsics: CameraIntrinsics
    labels: dict = field(default_factory=dict)  # object id -> true label

    @property
    def object_map(self):
        return ObjectMap(self.categories, self.objects)

    def world_to_camera(self, k):
        return self.camera_poses[k].inverse()

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        K = self.intrinsics
        save_map(out / "map.json", self.categories, self.objects)
        save_detections(out / "detections.json", self.frames, (K.width, K.height), K)
        save_trajectory(out / "groundtruth.txt", self.timestamps, self.camera_poses)
        (out / "camera.txt").write_text(K.to_string() + "\n")
        with open(out / "synth_config.json", "w") as fh:
            json.dump(asdict(self.config), fh, indent=1)
            fh.write("\n")
        return out


def look_at(eye, target, up=_WORLD_UP) -> PoseSE3:
    """Camera-to-world pose (x right, y down, z forward) at ``eye`` facing ``target``."""
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return PoseSE3(np.column_stack([x, y, z]), eye)


def _yaw_quaternion(yaw):
    return np.array([np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)])


def _place_objects(cfg: SynthConfig, rng, n_cats):
    half = cfg.extent / 2
    positions, labels = [], []
    if cfg.layout == "clusters":
        # the same label template repeated around several centres
        template = [k % n_cats for k in range(cfg.cluster_labels)]
        template = template + template[:1]
        centres = [
            [0.6 * half * np.cos(a), 0.6 * half * np.sin(a)]
            for a in 2 * np.pi * np.arange(cfg.cluster_count) / cfg.cluster_count + rng.uniform(0, 2 * np.pi)
        ]
        for c in centres:
            for lab in template:
                off = rng.uniform(-cfg.cluster_radius, cfg.cluster_radius, 2)
                positions.append([c[0] + off[0], c[1] + off[1], rng.uniform(0, cfg.height)])
                labels.append(lab)
    filler = range(cfg.cluster_labels, n_cats) if cfg.layout == "clusters" and n_cats > cfg.cluster_labels else range(n_cats)
    filler = list(filler)
    while len(positions) < cfg.object_count:
        positions.append([rng.uniform(-half, half), rng.uniform(-half, half), rng.uniform(0, cfg.height)])
        labels.append(int(filler[rng.integers(len(filler))]))
    return np.array(positions[: cfg.object_count]), labels[: cfg.object_count]


def _other_label(true, n_cats, rng):
    k = int(rng.integers(n_cats - 1)) if n_cats > 1 else 0
    return k + 1 if n_cats > 1 and k >= true else k


def generate_synthetic(cfg: SynthConfig) -> SyntheticScene:
    rng = np.random.default_rng(cfg.seed)
    cats = CategorySet(COCO_CATEGORIES[: cfg.category_count])
    K = cfg.camera()
    n_cats = len(cats)

    positions, labels = _place_objects(cfg, rng, n_cats)
    objects = []
    for oid, (pos, lab) in enumerate(zip(positions, labels)):
        axes = rng.uniform(*cfg.size_range, 3)
        quad = DualQuadric(pos, _yaw_quaternion(rng.uniform(0, 2 * np.pi)), axes)
        n_obs = int(rng.integers(cfg.observations_range[0], cfg.observations_range[1] + 1))
        obs = []
        for k in range(n_obs):
            noisy = rng.random() < cfg.map_label_noise
            other = _other_label(lab, n_cats, rng)
            obs.append(Observation(k, cats[other if noisy else lab], float(rng.uniform(0.5, 1.0))))
        objects.append(ObjectLandmark.from_observations(oid, quad, obs, cats))

    Q = np.stack([o.quadric.matrix() for o in objects])
    centre = np.array([0.0, 0.0, cfg.height / 2])
    radius = cfg.extent
    frames, stamps, poses = [], [], []
    for k in range(cfg.frame_count):
        if cfg.camera_path == "orbit":
            ang = 2 * np.pi * k / cfg.frame_count
            r = radius
        else:
            ang = rng.uniform(0, 2 * np.pi)
            r = radius * rng.uniform(0.85, 1.2)
        jitter = rng.normal(0, 0.3, 3) * [1, 1, 0.3]
        eye = np.array([r * np.cos(ang), r * np.sin(ang), cfg.height / 2 + 0.5 + rng.uniform(-0.3, 0.3)])
        T_wc = look_at(eye, centre + jitter)
        T_cw = T_wc.inverse()
        mu, S, ok = project_quadrics_batch(Q, T_cw.rotation, T_cw.translation, K)
        S = np.where(ok[:, None, None], S, np.eye(2))
        boxes = ellipse_bboxes(mu, S)
        inside = (
            ok
            & (boxes[:, 0] >= 0)
            & (boxes[:, 1] >= 0)
            & (boxes[:, 2] <= K.width)
            & (boxes[:, 3] <= K.height)
        )
        order = rng.permutation(len(objects))
        dets = []
        for i in order:
            # draws are made for every object so scenes differing only in
            # noise levels share geometry
            dc = rng.normal(0, 1, 2) * cfg.sigma_center
            ds = rng.normal(0, 1, 2) * cfg.sigma_size
            flip = rng.random() < cfg.flip_probability
            other = _other_label(labels[i], n_cats, rng)
            score = float(rng.uniform(0.5, 1.0))
            if not inside[i]:
                continue
            x0, y0, x1, y1 = boxes[i]
            cx, cy = (x0 + x1) / 2 + dc[0], (y0 + y1) / 2 + dc[1]
            hw = (x1 - x0) / 2 * max(0.05, 1 + ds[0])
            hh = (y1 - y0) / 2 * max(0.05, 1 + ds[1])
            if cfg.sigma_center == 0 and cfg.sigma_size == 0:
                box = (x0, y0, x1, y1)
            else:
                box = (cx - hw, cy - hh, cx + hw, cy + hh)
            label = cats[other] if flip and n_cats > 1 else cats[labels[i]]
            dets.append(Detection(box, label, score, object_id=int(objects[i].id)))
        frames.append(Frame(k, k * cfg.frame_interval, dets))
        stamps.append(k * cfg.frame_interval)
        poses.append(T_wc)
    return SyntheticScene(cfg, cats, objects, frames, stamps, poses, K, {o.id: cats[l] for o, l in zip(objects, labels)})

"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .geometry import CameraIntrinsics, PoseSE3
from .io import ObjectMap
from .semantics import CategorySet, Detection, ObjectLandmark

BASELINES = ("graph", "none-graph", "random-walk")


def check_intrinsics(K) -> CameraIntrinsics:
    if isinstance(K, CameraIntrinsics):
        return K
    if isinstance(K, str):
        return CameraIntrinsics.from_string(K)
    if isinstance(K, (tuple, list)) and len(K) == 6:
        return CameraIntrinsics(*K)
    raise TypeError(f"cannot interpret {K!r} as camera intrinsics")


def check_pose(T: PoseSE3, tol=1e-9) -> PoseSE3:
    if not isinstance(T, PoseSE3):
        raise TypeError("expected a PoseSE3")
    if not T.is_valid(tol):
        raise ValueError("rotation is not orthonormal with det +1")
    return T


def check_object_map(X) -> ObjectMap:
    """Accept an :class:`ObjectMap` or a ``(categories, objects)`` pair."""
    try:
        cats, objects = X
    except (TypeError, ValueError):
        raise TypeError("expected (CategorySet, list of ObjectLandmark)") from None
    if not isinstance(cats, CategorySet):
        cats = CategorySet(cats)
    objects = list(objects)
    for o in objects:
        if not isinstance(o, ObjectLandmark):
            raise TypeError(f"expected ObjectLandmark, got {type(o).__name__}")
        if o.distribution.shape != (len(cats),):
            raise ValueError(f"object {o.id}: distribution has {o.distribution.size} entries, expected {len(cats)}")
        if o.observations and abs(o.distribution.sum() - 1.0) > 1e-9:
            raise ValueError(f"object {o.id}: distribution does not sum to 1")
    ids = [o.id for o in objects]
    if len(set(ids)) != len(ids):
        raise ValueError("object ids must be unique")
    return ObjectMap(cats, objects)


def check_detections(dets, cats: CategorySet) -> list:
    dets = list(dets)
    for d in dets:
        if not isinstance(d, Detection):
            raise TypeError(f"expected Detection, got {type(d).__name__}")
        cats.index(d.label)
        if not np.all(np.isfinite(d.bbox)):
            raise ValueError("non-finite bbox")
    return dets


def check_choice(name, value, options):
    if value not in options:
        raise ValueError(f"{name} must be one of {options}, got {value!r}")
    return value

"""Readers and writers for maps, detection streams, TUM trajectories and
relocalization reports.

Maps, detections and reports are JSON documents whose ``header`` block names
the format and the units of every quantity. Trajectories use the TUM
plain-text convention ``timestamp tx ty tz qx qy qz qw`` (camera-to-world).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .evaluation import Trajectory
from .exceptions import EmptyBox, InvariantViolation, NoObservations, ParseError, UnknownCategory
from .geometry import CameraIntrinsics, DualQuadric, PoseSE3
from .semantics import CategorySet, Detection, ObjectLandmark, Observation

MAP_FORMAT = "goreloc-map"
DETECTIONS_FORMAT = "goreloc-detections"
REPORT_FORMAT = "goreloc-report"
VERSION = 1

MAP_UNITS = {"position": "m", "semi_axes": "m", "orientation": "unit quaternion (w, x, y, z)"}
DETECTION_UNITS = {"bbox": "px (x_min, y_min, x_max, y_max)", "timestamp": "s", "score": "probability"}


class ObjectMap(NamedTuple):
    categories: CategorySet
    objects: list


@dataclass
class Frame:
    frame_id: int
    timestamp: float
    detections: list


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from None


def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=False)
        fh.write("\n")


def _field(obj, key, ctx):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"missing field {key!r}", ctx)
    return obj[key]


def _floats(value, n, ctx):
    try:
        out = [float(v) for v in value]
    except (TypeError, ValueError):
        raise ParseError(f"expected {n} numbers", ctx) from None
    if len(out) != n or not all(math.isfinite(v) for v in out):
        raise ParseError(f"expected {n} finite numbers, got {value!r}", ctx)
    return out


def _check_header(doc, fmt, path):
    header = _field(doc, "header", str(path))
    if header.get("format") != fmt:
        raise ParseError(f"expected format {fmt!r}, got {header.get('format')!r}", f"{path}:header.format")
    if header.get("version") != VERSION:
        raise ParseError(f"unsupported version {header.get('version')!r}", f"{path}:header.version")
    return header


# --------------------------------------------------------------------------
# maps
# --------------------------------------------------------------------------


def load_map(path) -> ObjectMap:
    doc = _read_json(path)
    _check_header(doc, MAP_FORMAT, path)
    names = _field(doc, "categories", str(path))
    try:
        cats = CategorySet(names)
    except ValueError as exc:
        raise InvariantViolation(f"{path}:categories: {exc}") from None
    objects = []
    seen = set()
    for k, entry in enumerate(_field(doc, "objects", str(path))):
        ctx = f"{path}:objects[{k}]"
        oid = _field(entry, "id", ctx)
        if not isinstance(oid, int) or oid in seen:
            raise InvariantViolation(f"{ctx}.id: ids must be unique integers")
        seen.add(oid)
        pos = _floats(_field(entry, "position", ctx), 3, f"{ctx}.position")
        quat = _floats(_field(entry, "orientation", ctx), 4, f"{ctx}.orientation")
        axes = _floats(_field(entry, "semi_axes", ctx), 3, f"{ctx}.semi_axes")
        if min(axes) <= 0:
            raise InvariantViolation(f"{ctx}.semi_axes: semi-axes must be positive, got {axes}")
        if abs(np.linalg.norm(quat) - 1.0) > 1e-6:
            raise InvariantViolation(f"{ctx}.orientation: quaternion is not unit length")
        quadric = DualQuadric(pos, quat, axes)
        if "observations" in entry:
            obs = []
            for n, o in enumerate(entry["observations"]):
                octx = f"{ctx}.observations[{n}]"
                score = float(_field(o, "score", octx))
                if not 0 < score <= 1:
                    raise InvariantViolation(f"{octx}.score: {score} outside (0, 1]")
                obs.append(Observation(int(_field(o, "keyframe", octx)), str(_field(o, "label", octx)), score))
            try:
                objects.append(ObjectLandmark.from_observations(oid, quadric, obs, cats))
            except (UnknownCategory, NoObservations) as exc:
                raise InvariantViolation(f"{ctx}.observations: {exc}") from None
        elif "distribution" in entry:
            dist = np.zeros(len(cats))
            for n, item in enumerate(entry["distribution"]):
                dctx = f"{ctx}.distribution[{n}]"
                try:
                    dist[cats.index(_field(item, "category", dctx))] = float(_field(item, "p", dctx))
                except UnknownCategory as exc:
                    raise InvariantViolation(f"{dctx}: {exc}") from None
            if np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
                raise InvariantViolation(f"{ctx}.distribution: must be non-negative and sum to 1")
            objects.append(ObjectLandmark(oid, quadric, dist))
        else:
            raise ParseError("object needs 'observations' or 'distribution'", ctx)
    return ObjectMap(cats, objects)


def map_document(cats: CategorySet, objects) -> dict:
    out = []
    for o in objects:
        entry = {
            "id": int(o.id),
            "position": [float(v) for v in o.quadric.position],
            "orientation": [float(v) for v in o.quadric.orientation],
            "semi_axes": [float(v) for v in o.quadric.semi_axes],
        }
        if o.observations:
            entry["observations"] = [
                {"keyframe": int(ob.keyframe), "label": ob.label, "score": float(ob.score)} for ob in o.observations
            ]
        else:
            entry["distribution"] = [
                {"category": cats[i], "p": float(p)} for i, p in enumerate(o.distribution) if p > 0
            ]
        out.append(entry)
    return {
        "header": {"format": MAP_FORMAT, "version": VERSION, "units": MAP_UNITS},
        "categories": list(cats.names),
        "objects": out,
    }


def save_map(path, cats: CategorySet, objects):
    _write_json(path, map_document(cats, objects))


# --------------------------------------------------------------------------
# detections
# --------------------------------------------------------------------------


def read_detections_header(path) -> dict:
    return _check_header(_read_json(path), DETECTIONS_FORMAT, path)


def load_detections(path, cats: CategorySet | None = None, image_size=None) -> Iterator[Frame]:
    """Yield frames in file order.

    Boxes are clamped to the image when its size is known (argument, else the
    header's ``image_size``). Timestamps must increase strictly.
    """
    doc = _read_json(path)
    header = _check_header(doc, DETECTIONS_FORMAT, path)
    if image_size is None and "image_size" in header:
        image_size = _floats(header["image_size"], 2, f"{path}:header.image_size")
    last_ts = -math.inf
    for k, rec in enumerate(_field(doc, "frames", str(path))):
        ctx = f"{path}:frames[{k}]"
        fid = _field(rec, "frame_id", ctx)
        ts = float(_field(rec, "timestamp", ctx))
        if not ts > last_ts:
            raise ParseError(f"timestamp {ts} does not increase (previous {last_ts})", f"{ctx}.timestamp")
        last_ts = ts
        dets = []
        for n, d in enumerate(_field(rec, "detections", ctx)):
            dctx = f"{ctx}.detections[{n}]"
            box = _floats(_field(d, "bbox", dctx), 4, f"{dctx}.bbox")
            if image_size is not None:
                w, h = image_size
                box = [min(max(box[0], 0.0), w), min(max(box[1], 0.0), h), min(max(box[2], 0.0), w), min(max(box[3], 0.0), h)]
            label = str(_field(d, "label", dctx))
            if cats is not None and label not in cats:
                raise UnknownCategory(f"{dctx}.label: unknown category {label!r}")
            score = float(_field(d, "score", dctx))
            try:
                dets.append(Detection(tuple(box), label, score, d.get("object_id")))
            except EmptyBox as exc:
                raise ParseError(str(exc), f"{dctx}.bbox") from None
            except ValueError as exc:
                raise ParseError(str(exc), dctx) from None
        yield Frame(int(fid), ts, dets)


def detections_document(frames, image_size=None, intrinsics: CameraIntrinsics | None = None) -> dict:
    header = {"format": DETECTIONS_FORMAT, "version": VERSION, "units": DETECTION_UNITS}
    if image_size is not None:
        header["image_size"] = [int(v) for v in image_size]
    if intrinsics is not None:
        header["intrinsics"] = intrinsics.to_string()
    out = []
    for fr in frames:
        dets = []
        for d in fr.detections:
            entry = {"bbox": [float(v) for v in d.bbox], "label": d.label, "score": float(d.score)}
            if d.object_id is not None:
                entry["object_id"] = int(d.object_id)
            dets.append(entry)
        out.append({"frame_id": int(fr.frame_id), "timestamp": float(fr.timestamp), "detections": dets})
    return {"header": header, "frames": out}


def save_detections(path, frames, image_size=None, intrinsics=None):
    _write_json(path, detections_document(frames, image_size, intrinsics))


# --------------------------------------------------------------------------
# TUM trajectories
# --------------------------------------------------------------------------


def load_trajectory(path):
    """Parse a TUM file into ``(timestamps, camera-to-world poses)``."""
    stamps, poses = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            ctx = f"{path}:{lineno}"
            if len(parts) != 8:
                raise ParseError(f"expected 8 fields, got {len(parts)}", ctx)
            try:
                ts, tx, ty, tz, qx, qy, qz, qw = (float(p) for p in parts)
            except ValueError:
                raise ParseError("non-numeric field", ctx) from None
            q = np.array([qw, qx, qy, qz])
            if abs(np.linalg.norm(q) - 1.0) > 1e-6:
                raise ParseError("quaternion is not unit length", ctx)
            stamps.append(ts)
            poses.append(PoseSE3.from_quaternion(q, [tx, ty, tz]))
    return Trajectory(stamps, poses)


def tum_line(timestamp, T_wc: PoseSE3):
    q = T_wc.quaternion
    vals = [*T_wc.translation, q[1], q[2], q[3], q[0]]
    return " ".join([repr(float(timestamp))] + [repr(float(v)) for v in vals])


def save_trajectory(path, timestamps, poses):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for ts, T in zip(timestamps, poses):
            fh.write(tum_line(ts, T) + "\n")


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


def save_report(path, doc):
    _write_json(path, doc)


def load_report(path) -> dict:
    doc = _read_json(path)
    _check_header(doc, REPORT_FORMAT, path)
    _field(doc, "frames", str(path))
    return doc

"""Category sets and per-node category distributions.

Detections carry an unnormalised one-hot distribution whose mass is the
detector score. Map objects aggregate all their keyframe observations into a
normalised distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import NoObservations, UnknownCategory, ZeroDistribution
from .geometry import DualQuadric, Ellipse2D, inscribed_ellipse

COCO_CATEGORIES = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat",
    "dog", "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack",
    "umbrella", "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball",
    "kite", "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket",
    "bottle", "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple",
    "sandwich", "orange", "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair",
    "couch", "potted plant", "bed", "dining table", "toilet", "tv", "laptop", "mouse",
    "remote", "keyboard", "cell phone", "microwave", "oven", "toaster", "sink",
    "refrigerator", "book", "clock", "vase", "scissors", "teddy bear", "hair drier",
    "toothbrush",
)  # fmt: skip


class CategorySet:
    """Ordered, immutable set of category names."""

    def __init__(self, names: Iterable[str]):
        names = tuple(names)
        if len(set(names)) != len(names):
            raise ValueError("category identifiers must be unique")
        self._names = names
        self._index = {c: i for i, c in enumerate(names)}

    @classmethod
    def coco(cls):
        return cls(COCO_CATEGORIES)

    def index(self, category: str) -> int:
        try:
            return self._index[category]
        except KeyError:
            raise UnknownCategory(f"unknown category {category!r}") from None

    def __contains__(self, category):
        return category in self._index

    def __len__(self):
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __getitem__(self, i):
        return self._names[i]

    def __eq__(self, other):
        return isinstance(other, CategorySet) and self._names == other._names

    def __hash__(self):
        return hash(self._names)

    def __repr__(self):
        return f"CategorySet({list(self._names)!r})"

    @property
    def names(self):
        return self._names


@dataclass(frozen=True, eq=False)
class Detection:
    bbox: tuple
    label: str
    score: float
    object_id: int | None = None  # ground truth, when known; never used for matching

    def __post_init__(self):
        bbox = tuple(float(v) for v in self.bbox)
        if len(bbox) != 4:
            raise ValueError("bbox must have 4 values")
        if not 0 < self.score <= 1:
            raise ValueError(f"score {self.score} outside (0, 1]")
        object.__setattr__(self, "bbox", bbox)
        object.__setattr__(self, "score", float(self.score))
        # raises EmptyBox on a degenerate box
        object.__setattr__(self, "_ellipse", inscribed_ellipse(bbox))

    @property
    def ellipse(self) -> Ellipse2D:
        return self._ellipse

    @property
    def center(self):
        return self._ellipse.center


@dataclass(frozen=True, eq=False)
class Observation:
    keyframe: int
    label: str
    score: float


@dataclass(frozen=True, eq=False)
class ObjectLandmark:
    id: int
    quadric: DualQuadric
    distribution: np.ndarray
    observations: tuple = field(default=())

    def __post_init__(self):
        d = np.array(self.distribution, dtype=float)
        if np.any(d < 0):
            raise ValueError("distribution entries must be non-negative")
        d.setflags(write=False)
        object.__setattr__(self, "distribution", d)
        object.__setattr__(self, "observations", tuple(self.observations))

    @classmethod
    def from_observations(cls, id, quadric, observations: Sequence[Observation], cats: CategorySet):
        dist = object_distribution([(o.label, o.score) for o in observations], cats)
        return cls(id, quadric, dist, tuple(observations))

    @property
    def position(self):
        return self.quadric.position


def detection_distribution(d: Detection, cats: CategorySet) -> np.ndarray:
    p = np.zeros(len(cats))
    p[cats.index(d.label)] = d.score
    return p


def object_distribution(observations, cats: CategorySet) -> np.ndarray:
    """Aggregate ``(label, score)`` observations into a normalised distribution.

    An observation may also be given as ``(vector, None)`` with a full
    per-category vector, e.g. softmax detector output.
    """
    observations = list(observations)
    if not observations:
        raise NoObservations("object has no observations")
    total = np.zeros(len(cats))
    for label, score in observations:
        if score is None:
            total += np.asarray(label, dtype=float)
        else:
            total[cats.index(label)] += score
    mass = total.sum()
    if mass <= 0:
        raise ZeroDistribution("observations carry no probability mass")
    return total / mass


def mode_label(dist, cats: CategorySet) -> str:
    dist = np.asarray(dist, dtype=float)
    if not np.any(dist > 0):
        raise ZeroDistribution("distribution is all zero")
    # argmax returns the first maximum, i.e. the lowest category index
    return cats[int(np.argmax(dist))]

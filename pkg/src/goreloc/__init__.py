"""Object-level camera relocalization with semantic graph matching.

Maps are sets of dual-quadric landmarks carrying category distributions.
Detections of one frame are matched to map objects through graph-kernel
descriptors and a RANSAC loop over P3P hypotheses; the pose is then refined
by aligning detection ellipses with projected quadrics.
"""

from .association import AssociationSet, Match, RansacParams, ransac_relocalize
from .estimator import FrameResult, ObjectRelocalizer
from .exceptions import GorelocError
from .geometry import CameraIntrinsics, DualQuadric, Ellipse2D, PoseSE3, project_quadric, wasserstein2
from .graph import SceneGraph, build_frame_graph, build_map_graph, kernel_vector, node_distance
from .io import Frame, ObjectMap, load_detections, load_map, load_trajectory
from .pose import RefinementConfig, pnp_from_centers, refine_pose
from .semantics import CategorySet, Detection, ObjectLandmark, Observation
from .synth import SynthConfig, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "AssociationSet",
    "CameraIntrinsics",
    "CategorySet",
    "Detection",
    "DualQuadric",
    "Ellipse2D",
    "Frame",
    "FrameResult",
    "GorelocError",
    "Match",
    "ObjectLandmark",
    "ObjectMap",
    "ObjectRelocalizer",
    "Observation",
    "PoseSE3",
    "RansacParams",
    "RefinementConfig",
    "SceneGraph",
    "SynthConfig",
    "build_frame_graph",
    "build_map_graph",
    "generate_synthetic",
    "kernel_vector",
    "load_detections",
    "load_map",
    "load_trajectory",
    "node_distance",
    "pnp_from_centers",
    "project_quadric",
    "ransac_relocalize",
    "refine_pose",
    "wasserstein2",
]

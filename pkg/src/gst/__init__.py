"""Grounded spatial-reasoning toolkit.

Subpackages and modules:

* :mod:`gst.scene`   -- scene types, back-projection, axis alignment, room area
* :mod:`gst.bundle`  -- on-disk scene bundle reader/writer
* :mod:`gst.patch`   -- semantic-geometric hybrid patch features
* :mod:`gst.gcot`    -- grounded chain-of-thought dataset generation
* :mod:`gst.respond` -- ``<think>/<bbox>/<answer>`` grammar
* :mod:`gst.evalkit` -- IoU, Acc@k, F1@k, exact match, numeric scoring
* :mod:`gst.align`   -- metric scale alignment and augmentation
"""

from gst.errors import GstError
from gst.scene import (
    Aabb,
    CameraIntrinsics,
    DepthMap,
    Frame,
    ObjectRecord,
    PointMap,
    Pose,
    SceneBundle,
)

__version__ = "0.1.0"

__all__ = [
    "Aabb",
    "CameraIntrinsics",
    "DepthMap",
    "Frame",
    "GstError",
    "ObjectRecord",
    "PointMap",
    "Pose",
    "SceneBundle",
]

"""Z-order (Morton) serialization of point clouds.

Coordinates are quantized to a voxel grid offset so the minimum corner is the
origin, 21 bits per axis.  Bit ``i`` of the x index lands at code bit
``3i``, y at ``3i + 1`` and z at ``3i + 2``; a voxel one step along z therefore
has code 4, along y code 2, along x code 1.
"""

import numpy as np

from gst.errors import InputError, RangeError

BITS_PER_AXIS = 21
MAX_INDEX = (1 << BITS_PER_AXIS) - 1


def _split_by_3(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(MAX_INDEX)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def quantize(points, voxel: float) -> np.ndarray:
    """Integer voxel indices relative to the cloud's minimum corner."""
    if not voxel > 0:
        raise InputError("voxel size must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise InputError("points must be finite")
    if len(pts) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    q = np.floor((pts - pts.min(axis=0)) / voxel)
    if q.max() > MAX_INDEX:
        raise RangeError(
            f"quantized coordinate {int(q.max())} exceeds the {BITS_PER_AXIS}-bit range; "
            "use a larger voxel"
        )
    return q.astype(np.int64)


def morton_codes(points, voxel: float) -> np.ndarray:
    q = quantize(points, voxel)
    return _split_by_3(q[:, 0]) | (_split_by_3(q[:, 1]) << np.uint64(1)) | (
        _split_by_3(q[:, 2]) << np.uint64(2)
    )


def morton_serialize(points, voxel: float) -> np.ndarray:
    """Permutation sorting points by Morton code; ties keep input order."""
    return np.argsort(morton_codes(points, voxel), kind="stable")

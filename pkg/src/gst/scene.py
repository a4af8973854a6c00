"""Scene types and geometry: back-projection, aggregation, axis alignment, room area.

Camera frame convention: +x right, +y down, +z forward.  Poses are
camera-to-world.  Pixel ``(u, v)`` is column ``u``, row ``v``, sampled at the
integer coordinate (no half-pixel offset).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError

from gst.errors import DegenerateGeometryError, EmptyCloudError, InputError

ORTHONORMAL_TOL = 1e-6
DEFAULT_ALPHA = 0.5


def _frozen_array(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box, ``min`` and ``max`` corners in meters."""

    min: tuple
    max: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.min)
        hi = tuple(float(v) for v in self.max)
        if len(lo) != 3 or len(hi) != 3:
            raise InputError("Aabb corners must be 3-vectors")
        if any(a > b for a, b in zip(lo, hi)):
            raise InputError(f"Aabb min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def from_corners(cls, a: Sequence[float], b: Sequence[float]) -> "Aabb":
        """Box spanned by two opposite corners given in any order."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return cls(tuple(np.minimum(a, b)), tuple(np.maximum(a, b)))

    @classmethod
    def from_points(cls, points) -> "Aabb":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            raise InputError("cannot bound an empty point set")
        return cls(tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.min) + np.asarray(self.max)) / 2.0

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.max) - np.asarray(self.min)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def corners(self) -> np.ndarray:
        lo, hi = self.min, self.max
        return np.array(
            [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
        )

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.min) and np.all(p <= self.max))

    def distance_to(self, point) -> float:
        """Euclidean distance from ``point`` to the box (0 inside)."""
        p = np.asarray(point, dtype=float)
        d = np.maximum(np.maximum(np.asarray(self.min) - p, 0.0), p - np.asarray(self.max))
        return float(np.linalg.norm(d))

    def as_list(self) -> list:
        return [*self.min, *self.max]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise InputError(f"intrinsics {name} is not finite")
            object.__setattr__(self, name, v)
        if self.fx <= 0 or self.fy <= 0:
            raise InputError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def check_image(self, width: int, height: int) -> None:
        if not (0 <= self.cx < width and 0 <= self.cy < height):
            raise InputError(
                f"principal point ({self.cx}, {self.cy}) outside {width}x{height} image"
            )


@dataclass(frozen=True)
class RigidTransform:
    """``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _frozen_array(self.rotation)
        t = _frozen_array(self.translation).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InputError("rotation must be 3x3 and translation a 3-vector")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise InputError(f"expected a 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return type(self)(
            self.rotation @ other.rotation, self.rotation @ other.translation + self.translation
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return type(self)(rt, -rt @ self.translation)

    def orthonormality_error(self) -> float:
        r = self.rotation
        return float(max(np.abs(r.T @ r - np.eye(3)).max(), abs(np.linalg.det(r) - 1.0)))

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None


class Pose(RigidTransform):
    """Camera-to-world rigid transform with a proper rotation."""

    def __post_init__(self):
        super().__post_init__()
        err = self.orthonormality_error()
        if err > ORTHONORMAL_TOL:
            raise InputError(f"pose rotation is not orthonormal (error {err:.3g})")


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel depth in meters with a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        v = _frozen_array(self.values)
        m = _frozen_array(self.valid, dtype=bool)
        if v.ndim != 2 or v.shape != m.shape:
            raise InputError("depth values and mask must be matching HxW arrays")
        good = v[m]
        if not np.all(np.isfinite(good)) or np.any(good <= 0):
            raise InputError("valid depths must be finite and positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid", m)

    @classmethod
    def from_array(cls, values) -> "DepthMap":
        """Wrap raw depths; zero and non-finite entries become invalid."""
        v = np.asarray(values, dtype=float)
        valid = np.isfinite(v) & (v > 0)
        return cls(np.where(valid, v, 0.0), valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class PointMap:
    """Per-pixel world points (H x W x 3) with the source depth's mask."""

    points: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        p = _frozen_array(self.points)
        m = _frozen_array(self.valid, dtype=bool)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[:2] != m.shape:
            raise InputError("point map must be HxWx3 with an HxW mask")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "valid", m)

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class ObjectRecord:
    id: int
    category: str
    box: Aabb
    first_visible_frame: Optional[int] = None

    def __post_init__(self):
        if not self.category or not self.category.strip():
            raise InputError(f"object {self.id} has an empty category")


@dataclass(frozen=True, eq=False)
class Frame:
    depth: DepthMap
    pose: Pose
    rgb: Optional[np.ndarray] = None
    image_ref: Optional[str] = None

    def __post_init__(self):
        if self.rgb is not None:
            rgb = _frozen_array(self.rgb, dtype=np.uint8)
            if rgb.shape != (self.depth.height, self.depth.width, 3):
                raise InputError("rgb image must match the depth map dimensions")
            object.__setattr__(self, "rgb", rgb)


@dataclass(frozen=True, eq=False)
class SceneBundle:
    """The ingestion unit: frames sharing one intrinsics, plus object metadata.

    ``axis_align_applied`` records whether boxes and poses are already
    expressed in the axis-aligned frame; ``axis_align`` (raw -> aligned) is
    kept either way when known.
    """

    frames: tuple
    intrinsics: CameraIntrinsics
    objects: tuple = ()
    axis_align: Optional[RigidTransform] = None
    axis_align_applied: bool = False
    room_area: Optional[float] = None
    scene_id: str = "scene"
    trajectories: tuple = field(default=())

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise InputError("a scene bundle needs at least one frame")
        shapes = {(f.depth.height, f.depth.width) for f in frames}
        if len(shapes) != 1:
            raise InputError(f"frames have mixed dimensions: {sorted(shapes)}")
        h, w = shapes.pop()
        self.intrinsics.check_image(w, h)
        objects = tuple(self.objects)
        ids = [o.id for o in objects]
        if len(ids) != len(set(ids)):
            raise InputError("object ids must be unique within a scene")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "objects", objects)
        object.__setattr__(self, "trajectories", tuple(self.trajectories))

    @property
    def height(self) -> int:
        return self.frames[0].depth.height

    @property
    def width(self) -> int:
        return self.frames[0].depth.width

    def point_maps(self) -> list:
        return [back_project(f.depth, self.intrinsics, f.pose) for f in self.frames]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Aggregated points with ``(frame, row, col)`` provenance per point."""

    points: np.ndarray
    provenance: np.ndarray

    def __len__(self):
        return len(self.points)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def camera_rays(width: int, height: int, k: CameraIntrinsics) -> np.ndarray:
    """Unit-depth camera-frame rays, H x W x 3."""
    u, v = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    return np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)


def back_project(depth: DepthMap, k: CameraIntrinsics, pose: RigidTransform) -> PointMap:
    """Lift every valid depth pixel to a world-frame point.

    Invalid pixels keep the mask and carry zeros in ``points``.
    """
    k.check_image(depth.width, depth.height)
    cam = camera_rays(depth.width, depth.height, k) * depth.values[..., None]
    world = pose.apply(cam.reshape(-1, 3)).reshape(cam.shape)
    world[~depth.valid] = 0.0
    return PointMap(world, depth.valid)


def camera_points(depth: DepthMap, k: CameraIntrinsics) -> PointMap:
    """Back-projection into the camera frame (identity pose)."""
    return back_project(depth, k, RigidTransform.identity())


def project(points, k: CameraIntrinsics, pose: RigidTransform):
    """World points -> (u, v, depth).  Inverse of :func:`back_project`."""
    cam = pose.inverse().apply(points)
    z = cam[..., 2]
    u = cam[..., 0] / z * k.fx + k.cx
    v = cam[..., 1] / z * k.fy + k.cy
    return u, v, z


def aggregate_points(maps: Sequence[PointMap]) -> PointCloud:
    """Concatenate valid points frame-major, row-major.  No deduplication."""
    if len(maps) == 0:
        raise InputError("aggregate_points needs at least one point map")
    chunks, prov = [], []
    for i, pm in enumerate(maps):
        rows, cols = np.nonzero(pm.valid)
        chunks.append(pm.points[rows, cols])
        prov.append(np.stack([np.full_like(rows, i), rows, cols], axis=1))
    points = np.concatenate(chunks, axis=0)
    if len(points) == 0:
        raise EmptyCloudError("no valid points in any map")
    return PointCloud(_frozen_array(points), _frozen_array(np.concatenate(prov), dtype=np.int64))


def _rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Smallest rotation taking unit vector ``a`` onto unit vector ``b``."""
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    s = float(np.linalg.norm(v))
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        # antiparallel: half-turn about any axis orthogonal to a
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx * ((1.0 - c) / s**2)


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _fit_plane(points: np.ndarray):
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    return vt[-1], centroid


def estimate_axis_align(
    points,
    *,
    floor_band: float = 0.3,
    iterations: int = 500,
    inlier_threshold: float = 0.02,
    seed: int = 0,
) -> RigidTransform:
    """Estimate the transform that puts the floor on z = 0 with +z up.

    The up axis is first guessed as the principal axis closest to +z, the
    floor plane is then found by RANSAC among the lowest ``floor_band``
    fraction of the height range, and finally the dominant horizontal
    principal direction is rotated onto +x (angle folded into (-90°, 90°]).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateGeometryError("axis alignment needs at least 3 points")
    centered = pts - pts.mean(axis=0)
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateGeometryError("points are collinear")

    up0 = vt[int(np.argmax(np.abs(vt[:, 2])))]
    if up0[2] < 0:
        up0 = -up0
    heights = pts @ up0
    lo, hi = heights.min(), heights.max()
    band = pts[heights <= lo + floor_band * (hi - lo) + 1e-12]
    if len(band) < 3:
        raise DegenerateGeometryError("too few points near the floor")

    rng = np.random.default_rng(seed)
    cos_limit = math.cos(math.radians(45.0))
    best_mask, best_count = None, 0
    for _ in range(iterations):
        idx = rng.choice(len(band), size=3, replace=False)
        a, b, c = band[idx]
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            continue
        n /= norm
        if abs(np.dot(n, up0)) < cos_limit:
            continue
        mask = np.abs((band - a) @ n) < inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_mask, best_count = mask, count
    if best_mask is None or best_count < 3:
        raise DegenerateGeometryError("no floor plane found")

    inliers = band[best_mask]
    normal, _ = _fit_plane(inliers)
    if np.dot(normal, up0) < 0:
        normal = -normal
    r_up = _rotation_between(normal, np.array([0.0, 0.0, 1.0]))

    xy = (pts @ r_up.T)[:, :2]
    cov = np.cov((xy - xy.mean(axis=0)).T)
    evals, evecs = np.linalg.eigh(cov)
    major = evecs[:, int(np.argmax(evals))]
    phi = math.atan2(major[1], major[0])
    if phi <= -math.pi / 2:
        phi += math.pi
    elif phi > math.pi / 2:
        phi -= math.pi
    rotation = rotation_z(-phi) @ r_up

    floor_z = float(np.median((inliers @ rotation.T)[:, 2]))
    return RigidTransform(rotation, np.array([0.0, 0.0, -floor_z]))


def compute_room_area(points, alpha: float = DEFAULT_ALPHA) -> float:
    """Alpha-shape area of the xy projection, in m².

    Delaunay triangles whose circumradius is below ``alpha`` are kept and
    their areas summed.
    """
    if alpha <= 0:
        raise InputError("alpha must be positive")
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] < 2:
        raise InputError("points must be an (n, 2) or (n, 3) array")
    xy = pts[:, :2]
    if len(xy) < 3:
        raise InputError("room area needs at least 3 points")
    try:
        tri = Delaunay(xy)
    except QhullError:
        return 0.0
    a, b, c = (xy[tri.simplices[:, i]] for i in range(3))
    ab = np.linalg.norm(b - a, axis=1)
    bc = np.linalg.norm(c - b, axis=1)
    ca = np.linalg.norm(a - c, axis=1)
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    area = 0.5 * np.abs(cross)
    with np.errstate(divide="ignore", invalid="ignore"):
        radius = np.where(area > 0, ab * bc * ca / (4.0 * area), np.inf)
    return float(area[radius < alpha].sum())


def transform_box(box: Aabb, transform: RigidTransform) -> Aabb:
    """Bounding box of the transformed corners."""
    return Aabb.from_points(transform.apply(box.corners()))


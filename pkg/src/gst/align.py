"""Global metric scale alignment and geometric training augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from gst.errors import InputError
from gst.scene import (
    Aabb,
    DepthMap,
    Frame,
    ObjectRecord,
    Pose,
    SceneBundle,
    camera_points,
)

log = logging.getLogger(__name__)

ROTATIONS = (0, 90, 180, 270)
SCALE_RANGE = (0.75, 1.25)
TRANSLATION_RANGE = (-1.0, 1.0)


@dataclass(frozen=True, eq=False)
class PointPairSet:
    """Corresponding camera-frame points: ``src`` (scale-free) and ``ref`` (metric)."""

    src: np.ndarray
    ref: np.ndarray
    view: np.ndarray = None  # per-pair view tag

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.float64).reshape(-1, 3)
        ref = np.asarray(self.ref, dtype=np.float64).reshape(-1, 3)
        if len(src) != len(ref) or len(src) == 0:
            raise InputError("need at least one pair and equally many src/ref points")
        if not (np.all(np.isfinite(src)) and np.all(np.isfinite(ref))):
            raise InputError("pair coordinates must be finite")
        view = np.zeros(len(src), dtype=np.int64) if self.view is None else np.asarray(self.view)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "ref", ref)
        object.__setattr__(self, "view", view)

    def __len__(self):
        return len(self.src)


def scale_residual(pairs: PointPairSet, s: float) -> float:
    return float(np.sum((s * pairs.src - pairs.ref) ** 2))


def _closed_form(src, ref) -> float:
    den = float(np.sum(src * src))
    if den <= 0:
        raise InputError("all source points are zero; scale is undetermined")
    return float(np.sum(src * ref)) / den


def solve_scale(pairs: PointPairSet, trim: float = 0.0) -> float:
    """Least-squares ``s`` minimizing ``Σ ||s·src - ref||²`` subject to ``s > 0``.

    With ``trim > 0`` the pairs with the largest residuals (that fraction of
    them) are dropped after the first solve and the scale is solved once more.
    """
    s = _closed_form(pairs.src, pairs.ref)
    if trim > 0:
        if not trim < 1:
            raise InputError("trim fraction must be in [0, 1)")
        res = np.sum((s * pairs.src - pairs.ref) ** 2, axis=1)
        keep = np.argsort(res, kind="stable")[: max(1, int(np.ceil(len(res) * (1 - trim))))]
        s = _closed_form(pairs.src[keep], pairs.ref[keep])
    if s <= 0:
        log.warning("non-positive least-squares scale %.6g; clamping", s)
        s = np.finfo(float).tiny
    return s


def pairs_from_bundles(src: SceneBundle, ref: SceneBundle) -> PointPairSet:
    """Camera-frame correspondences at pixels valid in both bundles, all frames."""
    if len(src.frames) != len(ref.frames):
        raise InputError(f"{len(src.frames)} source frames vs {len(ref.frames)} reference frames")
    if (src.height, src.width) != (ref.height, ref.width):
        raise InputError("bundles have different image dimensions")
    a, b, views = [], [], []
    for i, (fs, fr) in enumerate(zip(src.frames, ref.frames)):
        ps = camera_points(fs.depth, src.intrinsics)
        pr = camera_points(fr.depth, ref.intrinsics)
        both = ps.valid & pr.valid
        a.append(ps.points[both])
        b.append(pr.points[both])
        views.append(np.full(int(both.sum()), i))
    return PointPairSet(np.concatenate(a), np.concatenate(b), np.concatenate(views))


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

_QUARTER_TURNS = {
    0: np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float),
    90: np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float),
    180: np.array([[-1, 0, 0], [0, -1, 0], [0, 0, 1]], dtype=float),
    270: np.array([[0, 1, 0], [-1, 0, 0], [0, 0, 1]], dtype=float),
}


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: int = 0
    scale: float = 1.0
    translation: tuple = (0.0, 0.0, 0.0)

    def validate(self) -> None:
        if self.rotation_deg not in ROTATIONS:
            raise InputError(f"rotation must be one of {ROTATIONS}")
        if not SCALE_RANGE[0] <= self.scale <= SCALE_RANGE[1]:
            raise InputError(f"scale {self.scale} outside {SCALE_RANGE}")
        t = np.asarray(self.translation, dtype=float)
        if t.shape != (3,) or np.any(t < TRANSLATION_RANGE[0]) or np.any(t > TRANSLATION_RANGE[1]):
            raise InputError(f"translation {self.translation} outside {TRANSLATION_RANGE} m")

    @property
    def rotation(self) -> np.ndarray:
        return _QUARTER_TURNS[self.rotation_deg]

    def apply(self, points) -> np.ndarray:
        """``x -> R_z (scale x) + t`` with an exact quarter-turn ``R_z``."""
        pts = np.asarray(points, dtype=float)
        return (self.scale * pts) @ self.rotation.T + np.asarray(self.translation, dtype=float)

    def apply_box(self, box: Aabb) -> Aabb:
        lo = self.apply(np.asarray(box.min))
        hi = self.apply(np.asarray(box.max))
        return Aabb.from_corners(lo, hi)


def sample_augment(rng: np.random.Generator) -> AugmentParams:
    return AugmentParams(
        rotation_deg=int(rng.choice(ROTATIONS)),
        scale=float(rng.uniform(*SCALE_RANGE)),
        translation=tuple(float(v) for v in rng.uniform(*TRANSLATION_RANGE, size=3)),
    )


def apply_augment(bundle: SceneBundle, params: AugmentParams, strict: bool = True) -> SceneBundle:
    """Rotate, scale and translate the whole scene.

    Depths are multiplied by the scale and poses re-composed so that
    back-projecting the result reproduces the transformed world points.
    ``strict=False`` skips the range check (for tests of out-of-range scales).
    The stored ``axis_align`` transform is left untouched.
    """
    if strict:
        params.validate()
    if params.scale <= 0:
        raise InputError("scale must be positive")
    r = params.rotation
    t = np.asarray(params.translation, dtype=float)
    frames = []
    for f in bundle.frames:
        depth = DepthMap(f.depth.values * params.scale, f.depth.valid)
        pose = Pose(r @ f.pose.rotation, params.scale * (r @ f.pose.translation) + t)
        frames.append(Frame(depth, pose, f.rgb, f.image_ref))
    objects = [
        ObjectRecord(o.id, o.category, params.apply_box(o.box), o.first_visible_frame)
        for o in bundle.objects
    ]
    area = None if bundle.room_area is None else bundle.room_area * params.scale**2
    return replace(
        bundle,
        frames=tuple(frames),
        objects=tuple(objects),
        room_area=area,
        trajectories=tuple(params.apply(np.asarray(tr)) for tr in bundle.trajectories),
    )

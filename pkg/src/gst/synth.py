"""Synthetic fixture scenes with exactly known geometry.

The fixture is a 4 x 3 x 2.5 m box room holding twelve box objects, seen by
a camera at the room center that turns in 45° steps.  Depth and color are
ray-cast analytically, so every box, distance and visibility is known.
"""

from __future__ import annotations

import numpy as np

from gst.scene import (
    Aabb,
    CameraIntrinsics,
    DepthMap,
    Frame,
    ObjectRecord,
    Pose,
    RigidTransform,
    SceneBundle,
    compute_room_area,
)

ROOM = Aabb((0.0, 0.0, 0.0), (4.0, 3.0, 2.5))
CAMERA_CENTER = (2.0, 1.5, 1.3)
CAMERA_PITCH_DEG = -15.0
VISIBLE_PIXELS = 40  # pixel count that makes an object "visible" in a frame

FIXTURE_OBJECTS = (
    (1, "chair", (0.9, 0.3, 0.0), (1.4, 0.8, 0.9)),
    (2, "chair", (2.6, 0.3, 0.0), (3.1, 0.8, 0.9)),
    (3, "chair", (0.3, 2.2, 0.0), (0.8, 2.7, 0.9)),
    (4, "table", (3.2, 1.2, 0.0), (3.9, 2.0, 0.75)),
    (5, "sofa", (0.1, 0.9, 0.0), (0.9, 2.0, 0.8)),
    (6, "cabinet", (1.3, 2.6, 0.0), (2.1, 2.95, 1.8)),
    (7, "lamp", (3.5, 0.1, 0.0), (3.8, 0.4, 1.6)),
    (8, "tv", (2.3, 2.85, 0.8), (3.1, 2.95, 1.3)),
    (9, "shelf", (0.05, 0.05, 0.0), (0.5, 0.25, 1.9)),
    (10, "plant", (3.5, 2.5, 0.0), (3.85, 2.85, 1.0)),
    (11, "radiator", (1.8, 0.02, 0.1), (2.4, 0.12, 0.7)),
    (12, "telephone", (3.4, 1.5, 0.75), (3.6, 1.7, 0.85)),
)

# waypoints on the floor: left, straight, left, right
FIXTURE_TRAJECTORY = ((0.5, 0.5, 0.0), (3.2, 0.5, 0.0), (3.2, 0.9, 0.0), (3.2, 2.4, 0.0), (2.4, 2.4, 0.0), (2.4, 2.7, 0.0))

_OBJECT_COLORS = {
    "chair": (200, 60, 40),
    "table": (120, 80, 40),
    "sofa": (40, 90, 180),
    "cabinet": (230, 200, 120),
    "lamp": (250, 240, 90),
    "tv": (20, 20, 20),
    "shelf": (90, 160, 90),
    "plant": (30, 140, 50),
    "radiator": (210, 210, 220),
    "telephone": (160, 40, 160),
}


def look_rotation(yaw_deg: float, pitch_deg: float = 0.0) -> np.ndarray:
    """Camera-to-world rotation for a camera (x right, y down, z forward) in a z-up world."""
    yaw, pitch = np.radians(yaw_deg), np.radians(pitch_deg)
    forward = np.array([np.cos(yaw) * np.cos(pitch), np.sin(yaw) * np.cos(pitch), np.sin(pitch)])
    right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def _slab(origin, dirs, lo, hi):
    """Entry and exit ray parameters of an axis-aligned box, per ray."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (np.asarray(lo) - origin) * inv
        t2 = (np.asarray(hi) - origin) * inv
    t1 = np.nan_to_num(t1, nan=-np.inf)
    t2 = np.nan_to_num(t2, nan=np.inf)
    return np.minimum(t1, t2).max(axis=1), np.maximum(t1, t2).min(axis=1)


def ray_cast(origin, dirs, objects):
    """Nearest hit parameter and label (-1 room shell, else object index)."""
    origin = np.asarray(origin, dtype=float)
    _, t = _slab(origin, dirs, ROOM.min, ROOM.max)
    label = np.full(len(dirs), -1)
    for i, o in enumerate(objects):
        near, far = _slab(origin, dirs, o.box.min, o.box.max)
        hit = (near <= far) & (near > 0) & (near < t)
        t = np.where(hit, near, t)
        label = np.where(hit, i, label)
    return t, label


def _shade(points, label, objects, rng) -> np.ndarray:
    rgb = np.zeros((len(points), 3))
    shell = label < 0
    p = points[shell]
    color = np.tile([185.0, 180.0, 165.0], (len(p), 1))  # walls
    on_x = np.isclose(p[:, 0], ROOM.min[0], atol=1e-6) | np.isclose(p[:, 0], ROOM.max[0], atol=1e-6)
    color[on_x] = (205, 195, 175)
    floor = np.isclose(p[:, 2], ROOM.min[2], atol=1e-6)
    checker = (np.floor(p[:, 0] / 0.5) + np.floor(p[:, 1] / 0.5)) % 2 == 0
    color[floor] = np.where(checker[floor, None], (150, 110, 70), (120, 85, 55))
    color[np.isclose(p[:, 2], ROOM.max[2], atol=1e-6)] = (235, 235, 235)
    rgb[shell] = color
    for i, o in enumerate(objects):
        rgb[label == i] = _OBJECT_COLORS.get(o.category, (128, 128, 128))
    rgb += rng.normal(0.0, 4.0, size=rgb.shape)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def sample_rectangles(rects, spacing: float) -> np.ndarray:
    """Grid points (z = 0) covering a union of ``(xmin, ymin, xmax, ymax)`` rectangles."""
    pts = []
    for x0, y0, x1, y1 in rects:
        xs = x0 + spacing * np.arange(int(round((x1 - x0) / spacing)) + 1)
        ys = y0 + spacing * np.arange(int(round((y1 - y0) / spacing)) + 1)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts.append(np.stack([gx.ravel(), gy.ravel()], axis=1))
    xy = np.unique(np.round(np.concatenate(pts), 9), axis=0)
    return np.concatenate([xy, np.zeros((len(xy), 1))], axis=1)


def make_fixture(
    seed: int = 0,
    n_frames: int = 8,
    size: int = 64,
    depth_step: float = 0.001,
    depth_scale: float = 1.0,
    scene_id: str = "fixture",
) -> SceneBundle:
    """The twelve-object fixture scene.

    ``depth_step`` quantizes the rendered depth (meters); ``depth_scale``
    multiplies it afterwards, producing a uniformly rescaled copy of the
    camera-frame geometry (poses and boxes are left metric).
    """
    rng = np.random.default_rng(seed)
    k = CameraIntrinsics(size / 2, size / 2, size / 2, size / 2)
    rows, cols = np.mgrid[0:size, 0:size]
    cam_dirs = np.stack([(cols - k.cx) / k.fx, (rows - k.cy) / k.fy, np.ones_like(cols, float)], -1).reshape(-1, 3)
    objects = tuple(ObjectRecord(i, c, Aabb(lo, hi)) for i, c, lo, hi in FIXTURE_OBJECTS)

    frames, counts = [], []
    for f in range(n_frames):
        r = look_rotation(f * 360.0 / n_frames, CAMERA_PITCH_DEG)
        dirs = cam_dirs @ r.T
        t, label = ray_cast(CAMERA_CENTER, dirs, objects)
        depth = np.round(t / depth_step) * depth_step
        rgb = _shade(np.asarray(CAMERA_CENTER) + t[:, None] * dirs, label, objects, rng)
        frames.append(
            Frame(
                DepthMap.from_array(depth.reshape(size, size) * depth_scale),
                Pose(r, CAMERA_CENTER),
                rgb.reshape(size, size, 3),
            )
        )
        counts.append(np.bincount(label[label >= 0], minlength=len(objects)))

    counts = np.array(counts)
    records = []
    for i, o in enumerate(objects):
        seen = np.flatnonzero(counts[:, i] > VISIBLE_PIXELS)
        first = int(seen[0]) if len(seen) else None
        records.append(ObjectRecord(o.id, o.category, o.box, first))

    floor = sample_rectangles([(ROOM.min[0], ROOM.min[1], ROOM.max[0], ROOM.max[1])], 0.05)
    return SceneBundle(
        frames=tuple(frames),
        intrinsics=k,
        objects=tuple(records),
        axis_align=RigidTransform.identity(),
        axis_align_applied=True,
        room_area=compute_room_area(floor),
        scene_id=scene_id,
        trajectories=(np.array(FIXTURE_TRAJECTORY),),
    )

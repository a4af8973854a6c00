"""Scene and frame metadata for question generation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Optional

import numpy as np

from gst.errors import InputError
from gst.scene import (
    DEFAULT_ALPHA,
    SceneBundle,
    aggregate_points,
    compute_room_area,
    estimate_axis_align,
)

DEFAULT_AREA_THRESHOLD = 500  # pixels


@lru_cache(maxsize=1)
def templates() -> dict:
    text = resources.files("gst.gcot").joinpath("templates.json").read_text(encoding="utf-8")
    return json.loads(text)


@dataclass(frozen=True, eq=False)
class Trajectory:
    anchors: np.ndarray  # (n, 3)
    annotations: tuple = ()

    def __post_init__(self):
        a = np.asarray(self.anchors, dtype=float)
        if a.ndim != 2 or a.shape[1] not in (2, 3):
            raise InputError("trajectory anchors must be (n, 2) or (n, 3)")
        if a.shape[1] == 2:
            a = np.concatenate([a, np.zeros((len(a), 1))], axis=1)
        object.__setattr__(self, "anchors", a)


@dataclass(frozen=True, eq=False)
class SceneMeta:
    """Everything the generators read about one scene."""

    scene_id: str
    objects: tuple
    room_area: Optional[float] = None
    first_visible: dict = field(default_factory=dict)
    trajectories: tuple = ()

    def by_category(self) -> dict:
        groups: dict = {}
        for o in sorted(self.objects, key=lambda o: o.id):
            groups.setdefault(o.category, []).append(o)
        return dict(sorted(groups.items()))

    def singletons(self) -> list:
        """Objects whose category occurs exactly once, sorted by category."""
        return [objs[0] for objs in self.by_category().values() if len(objs) == 1]


def build_frame_metadata(bundle: SceneBundle, masks: dict, area_thresh: float = DEFAULT_AREA_THRESHOLD) -> dict:
    """First frame index where each object's mask area exceeds ``area_thresh``.

    ``masks`` maps object id to a per-frame sequence of 2-D boolean masks
    (``None`` for frames where the object is absent).  Objects that never pass
    the threshold get no entry.
    """
    n = len(bundle.frames)
    first = {}
    for obj_id, per_frame in masks.items():
        if len(per_frame) != n:
            raise InputError(f"object {obj_id}: {len(per_frame)} masks for {n} frames")
        for i, m in enumerate(per_frame):
            if m is not None and int(np.count_nonzero(m)) > area_thresh:
                first[obj_id] = i
                break
    return first


def object_masks(bundle: SceneBundle, margin: float = 0.01) -> dict:
    """Per-frame visibility masks: pixels whose world point lies in the object's box.

    Boxes are grown by ``margin`` meters so surface points on the faces count.
    """
    maps = bundle.point_maps()
    out = {}
    for o in bundle.objects:
        lo = np.asarray(o.box.min) - margin
        hi = np.asarray(o.box.max) + margin
        out[o.id] = [pm.valid & np.all((pm.points >= lo) & (pm.points <= hi), axis=2) for pm in maps]
    return out


def scene_meta_from_bundle(
    bundle: SceneBundle,
    *,
    area_thresh: float = DEFAULT_AREA_THRESHOLD,
    alpha: float = DEFAULT_ALPHA,
) -> SceneMeta:
    """Collect generator inputs, deriving what the bundle does not store.

    Room area falls back to the alpha-shape area of the aggregated point cloud
    (axis-aligned first if the bundle is not); first-visible frames fall back
    to :func:`object_masks` + :func:`build_frame_metadata`.
    """
    area = bundle.room_area
    if area is None:
        pts = aggregate_points(bundle.point_maps()).points
        if not bundle.axis_align_applied:
            transform = bundle.axis_align or estimate_axis_align(pts)
            pts = transform.apply(pts)
        area = compute_room_area(pts, alpha)

    first = {o.id: o.first_visible_frame for o in bundle.objects if o.first_visible_frame is not None}
    if not first and bundle.objects:
        first = build_frame_metadata(bundle, object_masks(bundle), area_thresh)
    return SceneMeta(
        scene_id=bundle.scene_id,
        objects=bundle.objects,
        room_area=area,
        first_visible=first,
        trajectories=tuple(Trajectory(t) for t in bundle.trajectories),
    )

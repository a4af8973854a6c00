"""Top-down (bird's-eye-view) rendering used to prompt the CoT writer."""

from __future__ import annotations

import colorsys
import io
from dataclasses import dataclass, field

import numpy as np

from gst.errors import EmptyCloudError, InputError

STROKE = 2  # box outline width, pixels, drawn inward
DEFAULT_MPP = 0.02
DEFAULT_MARGIN = 4  # pixels of padding around the content
_GOLDEN = 0.618033988749895


def category_colors(categories) -> dict:
    """Deterministic, pairwise distinct colors for the sorted unique categories."""
    out = {}
    for i, c in enumerate(sorted(set(categories))):
        r, g, b = colorsys.hsv_to_rgb((i * _GOLDEN) % 1.0, 0.85, 1.0)
        out[c] = (round(r * 255), round(g * 255), round(b * 255))
    return out


@dataclass(frozen=True, eq=False)
class BevImage:
    raster: np.ndarray  # (H, W, 3) uint8
    mpp: float
    origin: tuple  # world (x, y) of the top-left pixel corner
    color_key: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.raster.shape[0]

    @property
    def width(self) -> int:
        return self.raster.shape[1]

    def pixel_of(self, xy) -> np.ndarray:
        """``(row, col)`` of world xy positions; x grows with column, y against row."""
        xy = np.asarray(xy, dtype=float)
        col = np.floor((xy[..., 0] - self.origin[0]) / self.mpp + 1e-9)
        row = np.floor((self.origin[1] - xy[..., 1]) / self.mpp + 1e-9)
        return np.stack([row, col], axis=-1).astype(np.int64)

    def to_png(self) -> bytes:
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(self.raster, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()


def render_bev(
    points,
    boxes,
    mpp: float = DEFAULT_MPP,
    margin: int = DEFAULT_MARGIN,
    color_key: dict | None = None,
) -> BevImage:
    """Z-max height raster of ``points`` with box footprints outlined.

    ``boxes`` is a sequence of ``(Aabb, rgb)`` pairs drawn in order.  Occupied
    pixels are gray, brighter for higher points; empty pixels stay black.
    """
    if not mpp > 0:
        raise InputError("meters per pixel must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyCloudError("nothing to render")
    xy = [pts[:, :2]]
    for box, _ in boxes:
        xy.append(np.array([box.min[:2], box.max[:2]]))
    xy = np.concatenate(xy)
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    width = int(np.floor((hi[0] - lo[0]) / mpp + 1e-9)) + 1 + 2 * margin
    height = int(np.floor((hi[1] - lo[1]) / mpp + 1e-9)) + 1 + 2 * margin
    origin = (float(lo[0] - margin * mpp), float(hi[1] + margin * mpp))
    img = BevImage(np.zeros((height, width, 3), np.uint8), float(mpp), origin, dict(color_key or {}))

    rc = img.pixel_of(pts[:, :2])
    rc[:, 0] = np.clip(rc[:, 0], 0, height - 1)
    rc[:, 1] = np.clip(rc[:, 1], 0, width - 1)
    zmax = np.full((height, width), -np.inf)
    np.maximum.at(zmax, (rc[:, 0], rc[:, 1]), pts[:, 2])
    occupied = np.isfinite(zmax)
    zlo, zhi = zmax[occupied].min(), zmax[occupied].max()
    span = zhi - zlo
    level = np.full(zmax.shape, 255.0) if span <= 0 else 60.0 + 195.0 * (zmax - zlo) / span
    gray = np.where(occupied, np.round(level), 0).astype(np.uint8)
    raster = np.repeat(gray[:, :, None], 3, axis=2)

    for box, color in boxes:
        r1, c0 = img.pixel_of(box.min[:2])
        r0, c1 = img.pixel_of(box.max[:2])
        _outline(raster, r0, r1, c0, c1, color)
    raster.setflags(write=False)
    object.__setattr__(img, "raster", raster)
    return img


def _outline(raster, r0, r1, c0, c1, color) -> None:
    """Rectangle ``[r0, r1] x [c0, c1]`` (inclusive) with an inward stroke."""
    s = STROKE - 1
    color = np.asarray(color, dtype=np.uint8)
    raster[r0 : min(r0 + s, r1) + 1, c0 : c1 + 1] = color
    raster[max(r1 - s, r0) : r1 + 1, c0 : c1 + 1] = color
    raster[r0 : r1 + 1, c0 : min(c0 + s, c1) + 1] = color
    raster[r0 : r1 + 1, max(c1 - s, c0) : c1 + 1] = color


def render_scene_bev(points, objects, mpp: float = DEFAULT_MPP, margin: int = DEFAULT_MARGIN) -> BevImage:
    """BEV of a scene with every object outlined in its category color."""
    key = category_colors(o.category for o in objects)
    boxes = [(o.box, key[o.category]) for o in sorted(objects, key=lambda o: o.id)]
    return render_bev(points, boxes, mpp, margin, key)

"""Semantic patch encoders.

Anything with a ``dim`` attribute and an ``encode(rgb, patch_size, frame_index)``
method returning ``(H', W', dim)`` features can be plugged into the pipeline.
"""

from __future__ import annotations

from pathlib import Path
from typing import Protocol

import numpy as np

from gst.errors import InputError

DESCRIPTOR_DIM = 20  # 4 quadrants x mean RGB + 8 orientation bins
ORIENTATION_BINS = 8


class SemanticEncoder(Protocol):
    dim: int

    def encode(self, rgb: np.ndarray, patch_size: int, frame_index: int = 0) -> np.ndarray: ...


def patch_descriptors(rgb: np.ndarray, p: int) -> np.ndarray:
    """Hand-crafted 20-d descriptor for every ``p x p`` patch.

    Mean RGB of the four quadrants (scaled to [0, 1]) followed by an 8-bin,
    magnitude-weighted histogram of gray-level gradient orientations that sums
    to one (all zeros for a flat patch).
    """
    img = np.asarray(rgb, dtype=np.float64) / 255.0
    h, w = img.shape[0] // p, img.shape[1] // p
    img = img[: h * p, : w * p]
    half = p // 2
    if half == 0:
        raise InputError("patch size must be at least 2 for quadrant descriptors")

    tiles = img.reshape(h, p, w, p, 3).transpose(0, 2, 1, 3, 4)  # (h, w, p, p, 3)
    quads = [
        tiles[:, :, :half, :half],
        tiles[:, :, :half, half:],
        tiles[:, :, half:, :half],
        tiles[:, :, half:, half:],
    ]
    color = np.concatenate([q.mean(axis=(2, 3)) for q in quads], axis=-1)  # (h, w, 12)

    gray = img.mean(axis=2)
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    bins = np.floor((np.arctan2(gy, gx) + np.pi) / (2 * np.pi) * ORIENTATION_BINS).astype(int)
    bins = np.clip(bins, 0, ORIENTATION_BINS - 1)
    hist = np.zeros((h, w, ORIENTATION_BINS))
    rows, cols = np.indices(gray.shape)
    np.add.at(hist, (rows // p, cols // p, bins), mag)
    total = hist.sum(axis=2, keepdims=True)
    hist = np.divide(hist, total, out=np.zeros_like(hist), where=total > 0)
    return np.concatenate([color, hist], axis=-1)


class ReferenceSemanticEncoder:
    """Deterministic descriptor projected to ``dim`` by a fixed matrix (dim x 20)."""

    def __init__(self, projection):
        self.projection = np.asarray(projection, dtype=np.float64)
        if self.projection.ndim != 2 or self.projection.shape[1] != DESCRIPTOR_DIM:
            raise InputError(f"projection must be (dim, {DESCRIPTOR_DIM})")
        self.dim = self.projection.shape[0]

    def encode(self, rgb, patch_size, frame_index=0):
        return patch_descriptors(rgb, patch_size) @ self.projection.T


class PrecomputedSemanticEncoder:
    """Serves features computed elsewhere, stored as an ``(N, H', W', D)`` array."""

    def __init__(self, features):
        self.features = np.asarray(features, dtype=np.float64)
        if self.features.ndim != 4:
            raise InputError("precomputed semantic features must be (N, H', W', D)")
        self.dim = self.features.shape[-1]

    @classmethod
    def load(cls, path):
        return cls(np.load(Path(path)))

    def encode(self, rgb, patch_size, frame_index=0):
        h, w = rgb.shape[0] // patch_size, rgb.shape[1] // patch_size
        out = self.features[frame_index]
        if out.shape[:2] != (h, w):
            raise InputError(f"precomputed grid {out.shape[:2]} does not match ({h}, {w})")
        return out

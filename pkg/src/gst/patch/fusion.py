"""Sinusoidal 3-D positional encoding and hybrid feature fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gst.errors import InputError
from gst.scene import Aabb


def positional_encode(point, scene_box: Aabb, dim: int) -> np.ndarray:
    """Encode points (``(..., 3)``) as ``dim``-vectors.

    Each axis is normalized to ``t`` in [0, 1] within ``scene_box`` and
    contributes ``dim / 6`` interleaved pairs ``sin(2^k π t), cos(2^k π t)``.
    Axes with zero extent encode ``t = 0``.
    """
    if dim <= 0 or dim % 6:
        raise InputError(f"encoding dimension {dim} is not a positive multiple of 6")
    pts = np.asarray(point, dtype=np.float64)
    if pts.shape[-1] != 3:
        raise InputError("points must have 3 coordinates")
    lo = np.asarray(scene_box.min)
    extent = np.asarray(scene_box.max) - lo
    safe = np.where(extent > 0, extent, 1.0)
    t = np.where(extent > 0, (pts - lo) / safe, 0.0)
    freqs = (2.0 ** np.arange(dim // 6)) * np.pi  # (L,)
    ang = t[..., :, None] * freqs  # (..., 3, L)
    pairs = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # (..., 3, L, 2)
    return pairs.reshape(*pts.shape[:-1], dim)


@dataclass(frozen=True, eq=False)
class HybridPatchFeature:
    """Fused per-patch vector and its three additive constituents."""

    hybrid: np.ndarray
    semantic: np.ndarray
    geometric: np.ndarray
    positional: np.ndarray


def fuse(semantic, geo_sem, geo_pos, pe, weights) -> HybridPatchFeature:
    """``P_sem @ semantic + pe + P_geo @ concat(geo_sem, geo_pos)``.

    Works on single vectors or on row-stacked batches.  ``weights`` maps
    ``p_sem`` (D x Ds) and ``p_geo`` (D x (Cout + C)).
    """
    p_sem = np.asarray(weights["p_sem"], dtype=np.float64)
    p_geo = np.asarray(weights["p_geo"], dtype=np.float64)
    semantic = np.asarray(semantic, dtype=np.float64)
    geo = np.concatenate(
        [np.asarray(geo_sem, dtype=np.float64), np.asarray(geo_pos, dtype=np.float64)], axis=-1
    )
    pe = np.asarray(pe, dtype=np.float64)
    if semantic.shape[-1] != p_sem.shape[1]:
        raise InputError(f"semantic width {semantic.shape[-1]} does not match P_sem {p_sem.shape}")
    if geo.shape[-1] != p_geo.shape[1]:
        raise InputError(f"geometric width {geo.shape[-1]} does not match P_geo {p_geo.shape}")
    if p_sem.shape[0] != p_geo.shape[0] or pe.shape[-1] != p_sem.shape[0]:
        raise InputError("projected widths and positional encoding width must agree")
    sem_term = semantic @ p_sem.T
    geo_term = geo @ p_geo.T
    return HybridPatchFeature(sem_term + pe + geo_term, sem_term, geo_term, pe)

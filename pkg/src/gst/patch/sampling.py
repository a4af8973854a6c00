"""Patch partitioning, per-patch point sampling and feature scattering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gst.errors import InputError
from gst.scene import PointMap


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """Sampled points of one point map, laid out per patch.

    Arrays are indexed ``[h', w']`` over the patch grid; per-sample arrays
    carry a trailing sample axis of length ``k``.  Fully invalid patches have
    ``valid_count == 0``, zero samples and ``center_valid == False``.
    """

    patch_size: int
    samples: np.ndarray  # (H', W', K, 3)
    sample_pixels: np.ndarray  # (H', W', K, 2) absolute (row, col)
    valid_count: np.ndarray  # (H', W')
    pad_count: np.ndarray  # (H', W')
    centers: np.ndarray  # (H', W', 3)
    center_valid: np.ndarray  # (H', W')
    dropped: tuple = (0, 0)  # remainder (rows, cols) not covered by the grid

    @property
    def grid_shape(self) -> tuple:
        return self.valid_count.shape

    @property
    def k(self) -> int:
        return self.samples.shape[2]

    @property
    def patch_valid(self) -> np.ndarray:
        return self.valid_count > 0


def partition_and_sample(pmap: PointMap, p: int, k: int, seed) -> PatchGrid:
    """Split ``pmap`` into ``p x p`` patches and draw ``k`` points from each.

    Patches with at least ``k`` valid pixels are sampled without replacement.
    Sparser patches take every valid pixel once and fill the remaining slots
    with draws with replacement (``pad_count`` records how many).  Patches
    are visited row-major and all draws come from ``default_rng(seed)``.
    """
    if p <= 0 or k <= 0:
        raise InputError("patch size and sample count must be positive")
    h, w = pmap.height // p, pmap.width // p
    if h == 0 or w == 0:
        raise InputError(f"{pmap.width}x{pmap.height} map is smaller than one {p}x{p} patch")
    rng = np.random.default_rng(seed)

    samples = np.zeros((h, w, k, 3))
    pixels = np.zeros((h, w, k, 2), dtype=np.int64)
    valid_count = np.zeros((h, w), dtype=np.int64)
    pad_count = np.zeros((h, w), dtype=np.int64)
    centers = np.zeros((h, w, 3))
    center_valid = np.zeros((h, w), dtype=bool)

    local_r, local_c = np.divmod(np.arange(p * p), p)
    mid = p // 2
    for i in range(h):
        for j in range(w):
            r0, c0 = i * p, j * p
            mask = pmap.valid[r0 : r0 + p, c0 : c0 + p].reshape(-1)
            idx = np.flatnonzero(mask)
            n = len(idx)
            valid_count[i, j] = n
            if n == 0:
                continue
            if n >= k:
                chosen = rng.choice(idx, size=k, replace=False)
            else:
                chosen = np.concatenate([idx, rng.choice(idx, size=k - n, replace=True)])
                pad_count[i, j] = k - n
            rows = r0 + local_r[chosen]
            cols = c0 + local_c[chosen]
            pixels[i, j, :, 0] = rows
            pixels[i, j, :, 1] = cols
            samples[i, j] = pmap.points[rows, cols]

            d2 = (local_r[idx] - mid) ** 2 + (local_c[idx] - mid) ** 2
            nearest = idx[int(np.argmin(d2))]
            centers[i, j] = pmap.points[r0 + local_r[nearest], c0 + local_c[nearest]]
            center_valid[i, j] = True

    return PatchGrid(
        patch_size=p,
        samples=samples,
        sample_pixels=pixels,
        valid_count=valid_count,
        pad_count=pad_count,
        centers=centers,
        center_valid=center_valid,
        dropped=(pmap.height - h * p, pmap.width - w * p),
    )


def flatten_samples(grids) -> tuple:
    """Stack the samples of all valid patches.

    Returns ``(points, provenance)`` with provenance rows
    ``(frame, sample, h', w')`` in frame-major, row-major, sample-minor order.
    """
    pts, prov = [], []
    for f, grid in enumerate(grids):
        hh, ww = np.nonzero(grid.patch_valid)
        kk = np.arange(grid.k)
        for i, j in zip(hh, ww):
            pts.append(grid.samples[i, j])
            prov.append(np.stack([np.full(grid.k, f), kk, np.full(grid.k, i), np.full(grid.k, j)], 1))
    if not pts:
        return np.zeros((0, 3)), np.zeros((0, 4), dtype=np.int64)
    return np.concatenate(pts), np.concatenate(prov).astype(np.int64)


@dataclass(frozen=True, eq=False)
class GeoFeatureMap:
    """Per-sample geometric features, ``data[frame, channel, sample, h', w']``."""

    data: np.ndarray
    written: np.ndarray  # (N, H', W') patches that received features

    @property
    def channels(self) -> int:
        return self.data.shape[1]


def scatter_to_map(features, provenance, shape, expected=None) -> GeoFeatureMap:
    """Place per-point features back into the ``(N, C, K, H', W')`` layout.

    ``shape`` is ``(N, K, H', W')``.  ``expected`` is an optional ``(N, H', W')``
    mask of patches that must be covered; by default every slot must be.
    Each expected slot has to be written exactly once.
    """
    feats = np.asarray(features, dtype=np.float64)
    prov = np.asarray(provenance, dtype=np.int64).reshape(-1, 4)
    n_frames, k, h, w = shape
    if feats.ndim != 2 or len(feats) != len(prov):
        raise InputError(f"{len(feats)} feature rows for {len(prov)} provenance entries")
    if len(prov) and (np.any(prov < 0) or np.any(prov.max(axis=0) >= [n_frames, k, h, w])):
        raise InputError("provenance index out of range")
    if expected is None:
        expected = np.ones((n_frames, h, w), dtype=bool)
    slot_expected = np.broadcast_to(np.asarray(expected, dtype=bool)[:, None], (n_frames, k, h, w))

    hits = np.zeros((n_frames, k, h, w), dtype=np.int64)
    f, s, i, j = prov.T
    np.add.at(hits, (f, s, i, j), 1)
    if np.any(hits > 1):
        raise InputError(f"{int((hits > 1).sum())} slots written more than once")
    if np.any(hits[~slot_expected] > 0):
        raise InputError("provenance writes into a patch not marked as expected")
    missing = int((slot_expected & (hits == 0)).sum())
    if missing:
        raise InputError(f"provenance gap: {missing} expected slots not written")

    out = np.zeros((n_frames, feats.shape[1], k, h, w))
    out[f, :, s, i, j] = feats
    return GeoFeatureMap(out, np.asarray(expected, dtype=bool).copy())

"""Semantic-aligned and position-aligned pooling of per-patch geometric features.

Matrices here follow the column-vector convention ``y = W @ x``.
"""

from __future__ import annotations

import numpy as np

from gst.errors import InputError

IDW_EPS = 1e-8
IDW_NEIGHBORS = 3


def _softmax(logits: np.ndarray, axis=-1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_attention_batch(queries, geo, wq, wk, wv):
    """Batched single-head cross-attention.

    queries: (P, Ds); geo: (P, K, C).  Returns ``(out (P, Cout), alpha (P, K))``.
    """
    queries = np.asarray(queries, dtype=np.float64)
    geo = np.asarray(geo, dtype=np.float64)
    wq, wk, wv = (np.asarray(m, dtype=np.float64) for m in (wq, wk, wv))
    if geo.ndim != 3 or geo.shape[1] == 0:
        raise InputError("geometric features must be a non-empty (P, K, C) array")
    if queries.shape != (geo.shape[0], wq.shape[1]):
        raise InputError(f"query shape {queries.shape} does not match W_q {wq.shape}")
    if wk.shape[1] != geo.shape[2] or wv.shape[1] != geo.shape[2] or wk.shape[0] != wq.shape[0]:
        raise InputError("key/value projections do not match the feature width")
    q = queries @ wq.T  # (P, d)
    k = geo @ wk.T  # (P, K, d)
    logits = np.einsum("pd,pkd->pk", q, k) / np.sqrt(wq.shape[0])
    alpha = _softmax(logits)
    # mix before projecting (W_v is linear); offsetting from the first sample
    # makes identical samples come back exactly
    base = geo[:, 0]
    mixed = base + np.einsum("pk,pkc->pc", alpha, geo - base[:, None])
    return mixed @ wv.T, alpha


def semantic_aligned_pool(query, geo, weights, return_weights: bool = False):
    """Attend over a patch's ``K`` geometric features with its semantic feature.

    ``weights`` maps ``wq`` (d x Ds), ``wk`` (d x C) and ``wv`` (Cout x C).
    """
    out, alpha = cross_attention_batch(
        np.asarray(query, dtype=np.float64)[None],
        np.asarray(geo, dtype=np.float64)[None],
        weights["wq"],
        weights["wk"],
        weights["wv"],
    )
    return (out[0], alpha[0]) if return_weights else out[0]


def idw_batch(centers, samples, geo, valid=None, eps: float = IDW_EPS, m: int = IDW_NEIGHBORS):
    """Inverse-distance interpolation of ``geo`` at ``centers``.

    centers: (P, 3); samples: (P, K, 3); geo: (P, K, C); valid: optional (P, K).
    Uses the ``min(m, K_valid)`` nearest valid samples with weights
    ``1 / (d + eps)``; a sample closer than ``eps`` is returned exactly.
    """
    centers = np.asarray(centers, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    geo = np.asarray(geo, dtype=np.float64)
    p, k, _ = samples.shape
    if valid is None:
        valid = np.ones((p, k), dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if np.any(valid.sum(axis=1) == 0):
        raise InputError("position-aligned sampling needs at least one valid sample")
    d = np.linalg.norm(samples - centers[:, None, :], axis=2)
    d = np.where(valid, d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    mm = min(m, k)
    near = order[:, :mm]
    dn = np.take_along_axis(d, near, axis=1)
    w = np.where(np.isfinite(dn), 1.0 / (dn + eps), 0.0)
    gn = np.take_along_axis(geo, near[:, :, None], axis=1)
    out = np.einsum("pm,pmc->pc", w, gn) / w.sum(axis=1, keepdims=True)
    exact = dn[:, 0] < eps
    if np.any(exact):
        out[exact] = gn[exact, 0]
    return out


def position_aligned_sample(center, samples, geo, valid=None, eps: float = IDW_EPS, m: int = IDW_NEIGHBORS):
    """Geometric feature at the patch-center point, interpolated from samples."""
    samples = np.asarray(samples, dtype=np.float64)
    geo = np.asarray(geo, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0 or len(geo) != len(samples):
        raise InputError("need a non-empty (K, 3) sample array with matching features")
    v = None if valid is None else np.asarray(valid, dtype=bool)[None]
    return idw_batch(np.asarray(center, dtype=np.float64)[None], samples[None], geo[None], v, eps, m)[0]

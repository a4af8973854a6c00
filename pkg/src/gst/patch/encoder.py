"""Minimal serialized point encoder.

Each stage orders points along a Z-order curve, splits the order into
consecutive groups of ``g`` points, runs single-head self-attention inside
every group and (except after the last stage) pools each group to one point:
features by max over ``f_j @ U``, position by mean.  Afterwards features are
unpooled back to full resolution by concatenating each point's features with
those of the group it was pooled into.

Feature matrices here use the row-vector convention ``f @ W``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gst.errors import InputError
from gst.patch.serialize import morton_codes
from gst.patch.weights import WeightStore, random_matrix


@dataclass(frozen=True, eq=False)
class PointSet:
    positions: np.ndarray  # (n, 3)
    attributes: np.ndarray  # (n, c)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        att = np.asarray(self.attributes, dtype=np.float64)
        if att.ndim == 1:
            att = att.reshape(len(pos), -1) if len(pos) else att.reshape(0, -1)
        if len(pos) != len(att):
            raise InputError(f"{len(pos)} positions but {len(att)} attribute rows")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "attributes", att)

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True)
class EncoderConfig:
    group_size: int = 16
    channels: tuple = (32, 64)
    voxel_sizes: tuple = (0.02, 0.1)
    head_dim: int = 32
    in_channels: int = 6

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "voxel_sizes", tuple(float(v) for v in self.voxel_sizes))
        if self.group_size < 2:
            raise InputError("group size must be at least 2")
        if not self.channels:
            raise InputError("at least one stage is required")
        if len(self.voxel_sizes) != len(self.channels):
            raise InputError("one voxel size per stage is required")
        if any(b < a for a, b in zip(self.channels, self.channels[1:])):
            raise InputError("channel widths must be non-decreasing")
        if any(v <= 0 for v in self.voxel_sizes):
            raise InputError("voxel sizes must be positive")

    @property
    def stages(self) -> int:
        return len(self.channels)

    @property
    def out_channels(self) -> int:
        return sum(self.channels)

    def weight_shapes(self) -> dict:
        shapes = {"encoder.embed": (self.in_channels, self.channels[0])}
        for s, c in enumerate(self.channels):
            shapes[f"encoder.stage{s}.q"] = (c, self.head_dim)
            shapes[f"encoder.stage{s}.k"] = (c, self.head_dim)
            shapes[f"encoder.stage{s}.v"] = (c, self.head_dim)
            shapes[f"encoder.stage{s}.o"] = (self.head_dim, c)
            if s + 1 < self.stages:
                shapes[f"encoder.pool{s}"] = (c, self.channels[s + 1])
        return shapes


def init_encoder_weights(cfg: EncoderConfig, rng: np.random.Generator) -> dict:
    return {
        name: random_matrix(rng, *shape, fan_in=shape[0]) for name, shape in cfg.weight_shapes().items()
    }


def pool_subset(subset: PointSet, u) -> tuple:
    """Pool one group: ``(mean position, componentwise max of f_j @ U)``."""
    if len(subset) == 0:
        raise InputError("cannot pool an empty subset")
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != subset.attributes.shape[1]:
        raise InputError(f"projection of shape {u.shape} does not match width {subset.attributes.shape[1]}")
    return subset.positions.mean(axis=0), (subset.attributes @ u).max(axis=0)


def unpool(fine, coarse, mapping) -> np.ndarray:
    """``concat(f_i, coarse[mapping[i]])`` for every fine point ``i``."""
    fine = np.asarray(fine, dtype=np.float64)
    coarse = np.asarray(coarse, dtype=np.float64)
    mapping = np.asarray(mapping)
    if fine.ndim != 2 or coarse.ndim != 2:
        raise InputError("fine and coarse features must be 2-D")
    if mapping.shape != (len(fine),):
        raise InputError(f"mapping has shape {mapping.shape}, expected ({len(fine)},)")
    if len(mapping) and (mapping.min() < 0 or mapping.max() >= len(coarse)):
        bad = int(np.flatnonzero((mapping < 0) | (mapping >= len(coarse)))[0])
        raise InputError(f"fine point {bad} is not mapped to a coarse subset")
    return np.concatenate([fine, coarse[mapping.astype(np.int64)]], axis=1)


def _canonical_order(pos: np.ndarray, feat: np.ndarray, voxel: float) -> np.ndarray:
    # Morton order with ties broken by coordinates and features, so the
    # order depends only on the point multiset, not on input indexing.
    codes = morton_codes(pos, voxel)
    keys = [feat[:, c] for c in range(feat.shape[1] - 1, -1, -1)]
    keys += [pos[:, 2], pos[:, 1], pos[:, 0], codes]
    return np.lexsort(keys)


def _group_attention(x: np.ndarray, g: int, wq, wk, wv, wo) -> np.ndarray:
    """Self-attention within consecutive groups of ``g`` rows of ``x``."""
    n, c = x.shape
    groups = math.ceil(n / g)
    pad = groups * g - n
    xp = np.concatenate([x, np.zeros((pad, c))]) if pad else x
    valid = np.arange(groups * g) < n
    xg = xp.reshape(groups, g, c)
    q, k, v = xg @ wq, xg @ wk, xg @ wv
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(wq.shape[1])
    scores = np.where(valid.reshape(groups, 1, g), scores, -np.inf)
    scores -= scores.max(axis=2, keepdims=True)
    att = np.exp(scores)
    att /= att.sum(axis=2, keepdims=True)
    out = (att @ v) @ wo
    return out.reshape(groups * g, -1)[:n]


def encode_points(points: PointSet, cfg: EncoderConfig, weights: WeightStore) -> np.ndarray:
    """Per-point geometric features, ``(n, sum(cfg.channels))``.

    The result is aligned with the input rows and equivariant under any
    permutation of them.
    """
    n = len(points)
    if n == 0:
        raise InputError("cannot encode an empty point set")
    if points.attributes.shape[1] != cfg.in_channels:
        raise InputError(
            f"points carry {points.attributes.shape[1]} attributes, encoder expects {cfg.in_channels}"
        )
    shapes = cfg.weight_shapes()
    w = {name: weights.expect(name, shape) for name, shape in shapes.items()}
    g = cfg.group_size

    pos = points.positions
    feat = np.maximum(points.attributes @ w["encoder.embed"], 0.0)
    feat0 = feat
    per_stage, mappings = [], []
    for s in range(cfg.stages):
        order = _canonical_order(pos, feat, cfg.voxel_sizes[s])
        if s == 0:
            first_order = order
        pre = f"encoder.stage{s}"
        attended = _group_attention(
            feat[order], g, w[f"{pre}.q"], w[f"{pre}.k"], w[f"{pre}.v"], w[f"{pre}.o"]
        )
        feat = feat.copy()
        feat[order] += attended
        per_stage.append(feat)
        if s + 1 == cfg.stages:
            break

        m = len(pos)
        groups = math.ceil(m / g)
        mapping = np.empty(m, dtype=np.int64)
        mapping[order] = np.arange(m) // g
        proj = feat @ w[f"encoder.pool{s}"]
        new_feat = np.full((groups, proj.shape[1]), -np.inf)
        np.maximum.at(new_feat, mapping, proj)
        counts = np.bincount(mapping, minlength=groups)
        new_pos = np.zeros((groups, 3))
        # sum in serialization order so the result is independent of input indexing
        np.add.at(new_pos, mapping[order], pos[order])
        new_pos /= counts[:, None]
        mappings.append(mapping)
        pos, feat = new_pos, new_feat

    up = per_stage[-1]
    for s in range(cfg.stages - 2, -1, -1):
        up = unpool(per_stage[s], up, mappings[s])
    return up[_duplicate_representatives(points.positions, feat0, first_order)]


def _duplicate_representatives(pos, feat, order) -> np.ndarray:
    """Row to read for each point so identical points share one output.

    Identical points may fall into different groups; which copy lands where
    depends on input indexing.  Every copy takes the output at the first
    canonical slot of its class, which does not.
    """
    _, inverse = np.unique(np.concatenate([pos, feat], axis=1), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    rank = np.empty(len(pos), dtype=np.int64)
    rank[order] = np.arange(len(pos))
    first = np.full(inverse.max() + 1, len(pos), dtype=np.int64)
    np.minimum.at(first, inverse, rank)
    return order[first[inverse]]

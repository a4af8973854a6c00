"""Bundle -> hybrid patch features, and the ``GSR1`` export format.

``GSR1`` layout (little-endian)::

    b"GSR1"
    u32 version, N, H', W', D
    f32 features   N*H'*W' x D   frame-major, row-major
    f32 centers    N*H'*W' x 3   NaN for patches without a valid point
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gst.errors import FormatError, InputError
from gst.patch.dual_path import cross_attention_batch, idw_batch
from gst.patch.encoder import EncoderConfig, PointSet, encode_points, init_encoder_weights
from gst.patch.fusion import fuse, positional_encode
from gst.patch.sampling import flatten_samples, partition_and_sample, scatter_to_map
from gst.patch.semantic import DESCRIPTOR_DIM, ReferenceSemanticEncoder
from gst.patch.weights import WeightStore, random_matrix
from gst.scene import Aabb, SceneBundle

GSR_MAGIC = b"GSR1"
GSR_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    patch_size: int = 16
    samples_per_patch: int = 64
    hidden_dim: int = 96
    semantic_dim: int = 64
    attn_dim: int = 32
    geo_sem_dim: int = 64
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.hidden_dim % 6:
            raise InputError("hidden_dim must be divisible by 6 for the positional encoding")

    def weight_shapes(self) -> dict:
        c = self.encoder.out_channels
        shapes = dict(self.encoder.weight_shapes())
        shapes.update(
            {
                "semantic.proj": (self.semantic_dim, DESCRIPTOR_DIM),
                "dual.wq": (self.attn_dim, self.semantic_dim),
                "dual.wk": (self.attn_dim, c),
                "dual.wv": (self.geo_sem_dim, c),
                "fusion.p_sem": (self.hidden_dim, self.semantic_dim),
                "fusion.p_geo": (self.hidden_dim, self.geo_sem_dim + c),
            }
        )
        return shapes


def init_weights(cfg: ModelConfig, seed: int) -> WeightStore:
    """Seeded random weights for every tensor the pipeline reads."""
    rng = np.random.default_rng(seed)
    tensors = init_encoder_weights(cfg.encoder, rng)
    for name, shape in cfg.weight_shapes().items():
        if name not in tensors:
            # column-vector convention: fan-in is the second dimension
            tensors[name] = random_matrix(rng, *shape, fan_in=shape[1])
    return WeightStore(tensors)


@dataclass(frozen=True, eq=False)
class HybridFeatures:
    features: np.ndarray  # (N, H', W', D)
    centers: np.ndarray  # (N, H', W', 3), NaN where invalid
    patch_valid: np.ndarray  # (N, H', W')
    semantic: np.ndarray
    geometric: np.ndarray
    positional: np.ndarray

    @property
    def token_count(self) -> int:
        return int(np.prod(self.features.shape[:3]))


def point_attributes(points, rgb, box: Aabb) -> np.ndarray:
    """Encoder input: box-normalized coordinates followed by RGB in [0, 1]."""
    lo = np.asarray(box.min)
    ext = np.asarray(box.max) - lo
    norm = np.where(ext > 0, (points - lo) / np.where(ext > 0, ext, 1.0), 0.0)
    return np.concatenate([norm, np.asarray(rgb, dtype=np.float64) / 255.0], axis=1)


def build_hybrid_features(
    bundle: SceneBundle,
    weights: WeightStore,
    cfg: ModelConfig = ModelConfig(),
    seed: int = 0,
    semantic_encoder=None,
) -> HybridFeatures:
    """Run the full patch pipeline on a bundle.

    Every frame contributes ``H' x W'`` tokens whether or not its patches hold
    valid depth; invalid patches carry only the semantic term.
    """
    p, k = cfg.patch_size, cfg.samples_per_patch
    shapes = cfg.weight_shapes()
    for name, shape in shapes.items():
        weights.expect(name, shape)
    if semantic_encoder is None:
        semantic_encoder = ReferenceSemanticEncoder(weights.get64("semantic.proj"))
    if semantic_encoder.dim != cfg.semantic_dim:
        raise InputError(f"semantic encoder width {semantic_encoder.dim} != {cfg.semantic_dim}")

    maps = bundle.point_maps()
    grids = [partition_and_sample(pm, p, k, seed=(seed, i)) for i, pm in enumerate(maps)]
    n_frames = len(grids)
    gh, gw = grids[0].grid_shape
    patch_valid = np.stack([g.patch_valid for g in grids])
    if not patch_valid.any():
        raise InputError("no patch holds a valid depth sample")

    points, prov = flatten_samples(grids)
    colors = np.zeros_like(points)
    for f, frame in enumerate(bundle.frames):
        if frame.rgb is None:
            continue
        sel = prov[:, 0] == f
        px = grids[f].sample_pixels[prov[sel, 2], prov[sel, 3], prov[sel, 1]]
        colors[sel] = frame.rgb[px[:, 0], px[:, 1]]
    box = Aabb.from_points(points)
    geo = encode_points(PointSet(points, point_attributes(points, colors, box)), cfg.encoder, weights)
    geo_map = scatter_to_map(geo, prov, (n_frames, k, gh, gw), expected=patch_valid)

    semantic = np.stack(
        [
            semantic_encoder.encode(
                f.rgb if f.rgb is not None else np.zeros((bundle.height, bundle.width, 3), np.uint8),
                p,
                i,
            )[:gh, :gw]
            for i, f in enumerate(bundle.frames)
        ]
    )
    c = cfg.encoder.out_channels
    flat_sem = semantic.reshape(-1, cfg.semantic_dim)
    flat_valid = patch_valid.reshape(-1)
    # (N, C, K, H', W') -> (N*H'*W', K, C)
    per_patch = geo_map.data.transpose(0, 3, 4, 2, 1).reshape(-1, k, c)
    samples = np.stack([g.samples for g in grids]).reshape(-1, k, 3)
    centers = np.stack([g.centers for g in grids]).reshape(-1, 3)

    geo_sem = np.zeros((len(flat_sem), cfg.geo_sem_dim))
    geo_pos = np.zeros((len(flat_sem), c))
    pe = np.zeros((len(flat_sem), cfg.hidden_dim))
    if flat_valid.any():
        geo_sem[flat_valid], _ = cross_attention_batch(
            flat_sem[flat_valid],
            per_patch[flat_valid],
            weights.get64("dual.wq"),
            weights.get64("dual.wk"),
            weights.get64("dual.wv"),
        )
        geo_pos[flat_valid] = idw_batch(centers[flat_valid], samples[flat_valid], per_patch[flat_valid])
        pe[flat_valid] = positional_encode(centers[flat_valid], box, cfg.hidden_dim)
    fused = fuse(
        flat_sem,
        geo_sem,
        geo_pos,
        pe,
        {"p_sem": weights.get64("fusion.p_sem"), "p_geo": weights.get64("fusion.p_geo")},
    )
    shape = (n_frames, gh, gw)
    centers_out = np.where(flat_valid[:, None], centers, np.nan)
    return HybridFeatures(
        features=fused.hybrid.reshape(*shape, -1),
        centers=centers_out.reshape(*shape, 3),
        patch_valid=patch_valid,
        semantic=fused.semantic.reshape(*shape, -1),
        geometric=fused.geometric.reshape(*shape, -1),
        positional=fused.positional.reshape(*shape, -1),
    )


def write_gsr1(path, features: np.ndarray, centers: np.ndarray) -> None:
    features = np.asarray(features)
    n, h, w, d = features.shape
    if np.shape(centers) != (n, h, w, 3):
        raise InputError("centers must be (N, H', W', 3)")
    header = GSR_MAGIC + struct.pack("<5I", GSR_VERSION, n, h, w, d)
    body = features.astype("<f4").tobytes() + np.asarray(centers).astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_gsr1(path) -> tuple:
    """Returns ``(features (N, H', W', D), centers (N, H', W', 3))`` as float32."""
    data = Path(path).read_bytes()
    if data[:4] != GSR_MAGIC:
        raise FormatError(path, "bad magic, expected GSR1", 0)
    if len(data) < 24:
        raise FormatError(path, "truncated header", len(data))
    version, n, h, w, d = struct.unpack("<5I", data[4:24])
    if version != GSR_VERSION:
        raise FormatError(path, f"unsupported version {version}", 4)
    tokens = n * h * w
    need = 24 + 4 * tokens * (d + 3)
    if len(data) != need:
        raise FormatError(path, f"expected {need} bytes, found {len(data)}", min(len(data), need))
    feats = np.frombuffer(data, dtype="<f4", count=tokens * d, offset=24).reshape(n, h, w, d)
    centers = np.frombuffer(data, dtype="<f4", count=tokens * 3, offset=24 + 4 * tokens * d)
    return feats, centers.reshape(n, h, w, 3)

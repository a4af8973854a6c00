"""Semantic-geometric hybrid patch representation."""

from gst.patch.dual_path import position_aligned_sample, semantic_aligned_pool
from gst.patch.encoder import EncoderConfig, PointSet, encode_points, pool_subset, unpool
from gst.patch.fusion import HybridPatchFeature, fuse, positional_encode
from gst.patch.pipeline import ModelConfig, build_hybrid_features, init_weights, read_gsr1, write_gsr1
from gst.patch.sampling import GeoFeatureMap, PatchGrid, partition_and_sample, scatter_to_map
from gst.patch.serialize import morton_codes, morton_serialize
from gst.patch.weights import WeightStore

__all__ = [
    "EncoderConfig",
    "GeoFeatureMap",
    "HybridPatchFeature",
    "ModelConfig",
    "PatchGrid",
    "PointSet",
    "WeightStore",
    "build_hybrid_features",
    "encode_points",
    "fuse",
    "init_weights",
    "morton_codes",
    "morton_serialize",
    "partition_and_sample",
    "pool_subset",
    "position_aligned_sample",
    "positional_encode",
    "read_gsr1",
    "scatter_to_map",
    "semantic_aligned_pool",
    "unpool",
    "write_gsr1",
]

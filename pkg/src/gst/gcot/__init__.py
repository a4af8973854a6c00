"""Grounded chain-of-thought dataset generation."""

from gst.gcot.bev import BevImage, category_colors, render_bev, render_scene_bev
from gst.gcot.dataset import GenConfig, dumps_jsonl, generate_scene, read_jsonl, to_records
from gst.gcot.llm import HttpBackend, LlmConfig, MockBackend, request_cot, validate_cot
from gst.gcot.metadata import SceneMeta, Trajectory, build_frame_metadata, scene_meta_from_bundle
from gst.gcot.tasks import (
    NO_COT_TASKS,
    TASKS,
    AmbiguousDirectionError,
    QaSample,
    assemble_answer,
    gen_abs_distance,
    gen_appearance_order,
    gen_object_count,
    gen_object_size,
    gen_rel_direction,
    gen_rel_distance,
    gen_room_size,
    gen_route_plan,
    rel_direction,
    route_turns,
)

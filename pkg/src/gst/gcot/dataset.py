"""Per-scene dataset generation and the JSONL record format."""

from __future__ import annotations

import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from gst.errors import CotRequestError, CotValidationError, FormatError, InputError
from gst.gcot import tasks as T
from gst.gcot.bev import DEFAULT_MPP, render_scene_bev
from gst.gcot.llm import LlmConfig, make_backend, request_cot
from gst.gcot.metadata import SceneMeta
from gst.scene import Aabb

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenConfig:
    seed: int
    tasks: tuple = T.TASKS
    per_task: int = 2
    straight_thresh: float = T.STRAIGHT_THRESHOLD_DEG
    mpp: float = DEFAULT_MPP
    llm: LlmConfig = field(default_factory=LlmConfig)

    def __post_init__(self):
        unknown = set(self.tasks) - set(T.TASKS)
        if unknown:
            raise InputError(f"unknown task(s): {sorted(unknown)}")
        if self.per_task < 1:
            raise InputError("per_task must be >= 1")


def task_rng(seed: int, task: str, scene_id: str) -> np.random.Generator:
    """Independent stream per (seed, task, scene) so task subsets do not shift each other."""
    return np.random.default_rng([seed, T.TASKS.index(task), zlib.crc32(scene_id.encode("utf-8"))])


def _draw(scene: SceneMeta, task: str, rng, cfg: GenConfig) -> list:
    if task == "room_size":
        qa = T.gen_room_size(scene)
        return [] if qa is None else [qa]
    if task == "route_plan":
        out = [T.gen_route_plan(scene, tr, cfg.straight_thresh, rng) for tr in scene.trajectories]
        return [qa for qa in out if qa is not None][: cfg.per_task]
    gen = {
        "object_count": T.gen_object_count,
        "abs_distance": T.gen_abs_distance,
        "object_size": T.gen_object_size,
        "rel_distance": T.gen_rel_distance,
        "rel_direction": T.gen_rel_direction,
        "appearance_order": T.gen_appearance_order,
    }[task]
    seen, out = set(), []
    for _ in range(cfg.per_task):
        qa = gen(scene, rng)
        if qa is not None and qa.question not in seen:
            seen.add(qa.question)
            out.append(qa)
    return out


def generate_questions(scene: SceneMeta, cfg: GenConfig) -> list:
    """All template samples for one scene, CoT still at the scaffold stage."""
    out = []
    for task in cfg.tasks:
        out.extend(_draw(scene, task, task_rng(cfg.seed, task, scene.scene_id), cfg))
    return out


def attach_cot(samples: list, scene: SceneMeta, points, cfg: GenConfig, backend=None) -> list:
    """Replace scaffolds with validated CoT text; failures keep no CoT.

    Requests run concurrently (bounded by ``max_in_flight``) but results keep
    the input order.
    """
    pending = [i for i, qa in enumerate(samples) if qa.cot_status == "scaffold"]
    if not pending:
        return list(samples)
    if points is None or len(points) == 0:
        points = np.concatenate([o.box.corners() for o in scene.objects])
    bev = render_scene_bev(points, scene.objects, cfg.mpp)
    own = backend is None
    backend = make_backend(cfg.llm) if own else backend

    def one(qa):
        try:
            return qa.with_cot(request_cot(backend, bev, qa), "ok")
        except (CotRequestError, CotValidationError) as exc:
            log.warning("%s/%s: CoT dropped (%s)", qa.scene_id, qa.task, exc)
            return qa.with_cot(None, "failed")

    try:
        with ThreadPoolExecutor(max_workers=cfg.llm.max_in_flight) as pool:
            done = list(pool.map(one, [samples[i] for i in pending]))
    finally:
        if own:
            backend.close()
    out = list(samples)
    for i, qa in zip(pending, done):
        out[i] = qa
    return out


def generate_scene(scene: SceneMeta, cfg: GenConfig, points=None, backend=None) -> list:
    return attach_cot(generate_questions(scene, cfg), scene, points, cfg, backend)


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


def _grounding_record(g) -> dict:
    return {"name": g.name, "count": g.count, "boxes": [b.as_list() for b in g.boxes]}


def to_records(samples: list) -> list:
    counters: dict = {}
    records = []
    for qa in samples:
        k = counters.get((qa.scene_id, qa.task), 0)
        counters[(qa.scene_id, qa.task)] = k + 1
        records.append(
            {
                "id": f"{qa.scene_id}/{qa.task}/{k}",
                "scene_id": qa.scene_id,
                "task": qa.task,
                "question": qa.question,
                "options": None if qa.options is None else list(qa.options),
                "answer": qa.answer,
                "numeric": qa.numeric,
                "groundings": [_grounding_record(g) for g in qa.groundings],
                "analysis": qa.analysis,
                "cot": qa.cot,
                "cot_status": qa.cot_status,
                "response": qa.response,
            }
        )
    return records


def dumps_jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in records)


def read_jsonl(path) -> list:
    records = []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.strip()
            if line:
                try:
                    records.append(json.loads(line))
                except ValueError as exc:
                    raise FormatError(path, f"invalid JSON record: {exc}", offset) from exc
            offset += len(raw)
    return records


def boxes_of(record: dict) -> list:
    """``(name, [Aabb, ...])`` per grounding of a record."""
    return [(g["name"], [Aabb.from_corners(b[:3], b[3:]) for b in g["boxes"]]) for g in record.get("groundings", [])]

"""Question generators for the eight spatial-reasoning task families.

Every generator takes the scene metadata and a ``numpy.random.Generator`` and
returns a :class:`QaSample`, or ``None`` when the scene offers nothing
eligible.  Numeric answers are rounded half-up: distances to 0.1 m, sizes to
1 cm, areas to 0.1 m².
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional

import numpy as np

from gst.errors import InputError
from gst.gcot.metadata import SceneMeta, Trajectory, templates
from gst.respond import Grounding, ResponseAst, emit_response
from gst.scene import Aabb

TASKS = (
    "object_count",
    "abs_distance",
    "object_size",
    "room_size",
    "rel_distance",
    "rel_direction",
    "appearance_order",
    "route_plan",
)
NO_COT_TASKS = frozenset({"object_count", "room_size", "appearance_order"})
LETTERS = "ABCDEFGH"
RESAMPLE_ATTEMPTS = 20
TIE_TOLERANCE = 1e-6
COLLINEAR_TOLERANCE = 1e-9
STRAIGHT_THRESHOLD_DEG = 15.0
TURN_LABELS = ("turn left", "turn right", "go straight")


class AmbiguousDirectionError(InputError):
    pass


@dataclass(frozen=True)
class QaSample:
    scene_id: str
    task: str
    question: str
    answer: str
    analysis: str
    direct: str
    groundings: tuple = ()
    cot: Optional[str] = None
    options: Optional[tuple] = None
    numeric: bool = False
    cot_status: str = "none"  # none | scaffold | ok | failed
    oracle: dict = field(default_factory=dict, compare=False)

    @property
    def response(self) -> str:
        """Full grounded answer text."""
        return assemble_answer(self.analysis, self.groundings, self.cot or self.direct, self.answer)

    def with_cot(self, cot: Optional[str], status: str) -> "QaSample":
        return replace(self, cot=cot, cot_status=status)


def assemble_answer(analysis: str, groundings, steps: str, final: str) -> str:
    """Grounded answer in the canonical response grammar."""
    return emit_response(ResponseAst(analysis.strip(), tuple(groundings), steps.strip(), final.strip()))


def round_half_up(value: float, ndigits: int) -> str:
    quantum = Decimal(1).scaleb(-ndigits)
    return str(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))


def _f3(v) -> str:
    return f"{float(v):.3f}"


def _f4(v) -> str:
    return f"{float(v):.4f}"


def _options_text(options) -> str:
    return " ".join(f"{LETTERS[i]}. {o}" for i, o in enumerate(options))


def _ground(obj) -> Grounding:
    return Grounding(obj.category, 1, (obj.box,))


def _scaffold(steps, direct: str) -> str:
    return "\n".join(steps) + "\n\n" + direct


def _pick(rng, items, k):
    idx = rng.choice(len(items), size=k, replace=False)
    return [items[int(i)] for i in idx]


def centroid_distance(a: Aabb, b: Aabb) -> float:
    return float(np.linalg.norm(a.center - b.center))


# ---------------------------------------------------------------------------
# counting, distance, size, room
# ---------------------------------------------------------------------------


def gen_object_count(scene: SceneMeta, rng) -> Optional[QaSample]:
    eligible = [(c, objs) for c, objs in scene.by_category().items() if len(objs) >= 2]
    if not eligible:
        return None
    category, objs = eligible[int(rng.integers(len(eligible)))]
    t = templates()["object_count"]
    answer = str(len(objs))
    return QaSample(
        scene_id=scene.scene_id,
        task="object_count",
        question=t["question"].format(category=category),
        answer=answer,
        analysis=t["analysis"].format(category=category),
        direct=t["direct"].format(category=category, answer=answer),
        numeric=True,
        oracle={"category": category, "value": len(objs)},
    )


def gen_abs_distance(scene: SceneMeta, rng) -> Optional[QaSample]:
    singles = scene.singletons()
    if len(singles) < 2:
        return None
    a, b = _pick(rng, singles, 2)
    ca, cb = a.box.center, b.box.center
    d = centroid_distance(a.box, b.box)
    answer = round_half_up(d, 1)
    t = templates()["abs_distance"]
    names = {"a": a.category, "b": b.category}
    delta = ca - cb
    steps = [
        s.format(
            **names,
            ax=_f3(ca[0]), ay=_f3(ca[1]), az=_f3(ca[2]),
            bx=_f3(cb[0]), by=_f3(cb[1]), bz=_f3(cb[2]),
            dx=_f3(delta[0]), dy=_f3(delta[1]), dz=_f3(delta[2]),
            dist=_f3(d),
        )
        for s in t["steps"]
    ]
    direct = t["direct"].format(**names, answer=answer)
    return QaSample(
        scene_id=scene.scene_id,
        task="abs_distance",
        question=t["question"].format(**names),
        answer=answer,
        analysis=t["analysis"].format(**names),
        direct=direct,
        groundings=(_ground(a), _ground(b)),
        cot=_scaffold(steps, direct),
        numeric=True,
        cot_status="scaffold",
        oracle={"ids": [a.id, b.id], "value": d},
    )


def gen_object_size(scene: SceneMeta, rng) -> Optional[QaSample]:
    singles = scene.singletons()
    if not singles:
        return None
    (obj,) = _pick(rng, singles, 1)
    ext = obj.box.extent
    diag = obj.box.diagonal
    answer = round_half_up(diag * 100.0, 0)
    t = templates()["object_size"]
    steps = [
        s.format(obj=obj.category, ex=_f3(ext[0]), ey=_f3(ext[1]), ez=_f3(ext[2]), diag=_f3(diag))
        for s in t["steps"]
    ]
    direct = t["direct"].format(obj=obj.category, answer=answer)
    return QaSample(
        scene_id=scene.scene_id,
        task="object_size",
        question=t["question"].format(obj=obj.category),
        answer=answer,
        analysis=t["analysis"].format(obj=obj.category),
        direct=direct,
        groundings=(_ground(obj),),
        cot=_scaffold(steps, direct),
        numeric=True,
        cot_status="scaffold",
        oracle={"ids": [obj.id], "value": diag * 100.0},
    )


def gen_room_size(scene: SceneMeta, rng=None) -> Optional[QaSample]:
    if scene.room_area is None:
        return None
    answer = round_half_up(scene.room_area, 1)
    t = templates()["room_size"]
    return QaSample(
        scene_id=scene.scene_id,
        task="room_size",
        question=t["question"],
        answer=answer,
        analysis=t["analysis"],
        direct=t["direct"].format(answer=answer),
        numeric=True,
        oracle={"value": scene.room_area},
    )


# ---------------------------------------------------------------------------
# relative distance / direction
# ---------------------------------------------------------------------------


def gen_rel_distance(scene: SceneMeta, rng) -> Optional[QaSample]:
    singles = scene.singletons()
    if len(singles) < 3:
        return None
    for _ in range(RESAMPLE_ATTEMPTS):
        n = int(rng.integers(3, 6))
        n = min(n, len(singles))
        chosen = _pick(rng, singles, n)
        anchor, cands = chosen[0], chosen[1:]
        dists = np.array([centroid_distance(anchor.box, c.box) for c in cands])
        ranked = np.sort(dists)
        if ranked[1] - ranked[0] > TIE_TOLERANCE:
            break
    else:
        return None
    best = int(np.argmin(dists))
    t = templates()["rel_distance"]
    names = [c.category for c in cands]
    letter = LETTERS[best]
    c = anchor.box.center
    steps = [s.format(anchor=anchor.category, x=_f3(c[0]), y=_f3(c[1]), z=_f3(c[2])) for s in t["steps"]]
    steps += [t["candidate"].format(name=nm, dist=_f3(d)) for nm, d in zip(names, dists)]
    direct = t["direct"].format(name=names[best], anchor=anchor.category, letter=letter)
    return QaSample(
        scene_id=scene.scene_id,
        task="rel_distance",
        question=t["question"].format(
            choices=", ".join(names), anchor=anchor.category, options=_options_text(names)
        ),
        answer=letter,
        analysis=t["analysis"].format(anchor=anchor.category),
        direct=direct,
        groundings=tuple(_ground(o) for o in chosen),
        cot=_scaffold(steps, direct),
        options=tuple(names),
        cot_status="scaffold",
        oracle={"anchor": anchor.id, "candidates": [o.id for o in cands], "distances": dists.tolist()},
    )


def direction_cross(observer: Aabb, facing: Aabb, target: Aabb) -> float:
    o, f, t = observer.center[:2], facing.center[:2], target.center[:2]
    fv, tv = f - o, t - o
    return float(fv[0] * tv[1] - fv[1] * tv[0])


def rel_direction(observer: Aabb, facing: Aabb, target: Aabb) -> str:
    """``"left"`` or ``"right"`` of the target seen from observer facing ``facing`` (xy plane)."""
    if np.linalg.norm(facing.center[:2] - observer.center[:2]) < COLLINEAR_TOLERANCE:
        raise AmbiguousDirectionError("observer and facing object share an xy centroid")
    cross = direction_cross(observer, facing, target)
    if abs(cross) < COLLINEAR_TOLERANCE:
        raise AmbiguousDirectionError("target is collinear with the facing direction")
    return "left" if cross > 0 else "right"


def gen_rel_direction(scene: SceneMeta, rng) -> Optional[QaSample]:
    singles = scene.singletons()
    if len(singles) < 3:
        return None
    for _ in range(RESAMPLE_ATTEMPTS):
        obs, fac, tgt = _pick(rng, singles, 3)
        try:
            side = rel_direction(obs.box, fac.box, tgt.box)
            break
        except AmbiguousDirectionError:
            continue
    else:
        return None
    t = templates()["rel_direction"]
    options = ("left", "right")
    letter = LETTERS[options.index(side)]
    names = {"observer": obs.category, "facing": fac.category, "target": tgt.category}
    oc, fc, tc = obs.box.center, fac.box.center, tgt.box.center
    v, w = fc[:2] - oc[:2], tc[:2] - oc[:2]
    cross = direction_cross(obs.box, fac.box, tgt.box)
    steps = [
        s.format(
            **names,
            ox1=_f4(obs.box.min[0]), ox2=_f4(obs.box.max[0]), ox=_f3(oc[0]),
            oy1=_f4(obs.box.min[1]), oy2=_f4(obs.box.max[1]), oy=_f3(oc[1]),
            fx=_f3(fc[0]), fy=_f3(fc[1]), vx=_f3(v[0]), vy=_f3(v[1]),
            tx=_f3(tc[0]), ty=_f3(tc[1]), wx=_f3(w[0]), wy=_f3(w[1]),
            cross=_f3(cross), sign="positive (left)" if cross > 0 else "negative (right)",
        )
        for s in t["steps"]
    ]
    direct = t["direct"].format(**names, side=side, letter=letter)
    return QaSample(
        scene_id=scene.scene_id,
        task="rel_direction",
        question=t["question"].format(**names, options=_options_text(options)),
        answer=letter,
        analysis=t["analysis"].format(**names),
        direct=direct,
        groundings=(_ground(obs), _ground(fac), _ground(tgt)),
        cot=_scaffold(steps, direct),
        options=options,
        cot_status="scaffold",
        oracle={"observer": obs.id, "facing": fac.id, "target": tgt.id, "side": side},
    )


# ---------------------------------------------------------------------------
# appearance order
# ---------------------------------------------------------------------------


def _derangements(n: int) -> list:
    return [p for p in itertools.permutations(range(n)) if all(p[i] != i for i in range(n))]


def gen_appearance_order(scene: SceneMeta, rng, frame_meta: Optional[dict] = None) -> Optional[QaSample]:
    first = scene.first_visible if frame_meta is None else frame_meta
    eligible = [o for o in scene.singletons() if o.id in first]
    if len(eligible) < 4:
        return None
    for _ in range(RESAMPLE_ATTEMPTS):
        chosen = _pick(rng, eligible, 4)
        frames = [first[o.id] for o in chosen]
        if len(set(frames)) == 4:
            break
    else:
        return None
    correct = [o.category for o in sorted(chosen, key=lambda o: first[o.id])]
    dperms = _derangements(4)
    picks = rng.choice(len(dperms), size=3, replace=False)
    distractors = [[correct[i] for i in dperms[int(k)]] for k in picks]
    slot = int(rng.integers(4))
    option_lists = distractors[:slot] + [correct] + distractors[slot:]
    options = tuple(", ".join(o) for o in option_lists)
    letter = LETTERS[slot]
    t = templates()["appearance_order"]
    return QaSample(
        scene_id=scene.scene_id,
        task="appearance_order",
        question=t["question"].format(
            choices=", ".join(o.category for o in chosen), options=_options_text(options)
        ),
        answer=letter,
        analysis=t["analysis"],
        direct=t["direct"].format(order=options[slot], letter=letter),
        options=options,
        oracle={"ids": [o.id for o in chosen], "frames": frames},
    )


# ---------------------------------------------------------------------------
# route planning
# ---------------------------------------------------------------------------


def route_turns(anchors, straight_thresh: float = STRAIGHT_THRESHOLD_DEG) -> list:
    """Signed heading change at every interior anchor.

    Returns ``(anchor index, angle in degrees, action)`` triples; positive
    angles turn left (counter-clockwise seen from +z).  Anchors that repeat
    the previous position are skipped.
    """
    pts = np.asarray(anchors, dtype=float)
    keep = [0]
    for i in range(1, len(pts)):
        if np.linalg.norm(pts[i, :2] - pts[keep[-1], :2]) > 1e-9:
            keep.append(i)
    turns = []
    for a, b, c in zip(keep, keep[1:], keep[2:]):
        v1 = pts[b, :2] - pts[a, :2]
        v2 = pts[c, :2] - pts[b, :2]
        angle = math.degrees(math.atan2(v1[0] * v2[1] - v1[1] * v2[0], float(np.dot(v1, v2))))
        if abs(angle) < straight_thresh:
            action = "go straight"
        elif angle > 0:
            action = "turn left"
        else:
            action = "turn right"
        turns.append((b, angle, action))
    return turns


def nearest_object(point, objects):
    """Object whose box is closest to ``point`` (ties go to the lower id)."""
    return min(sorted(objects, key=lambda o: o.id), key=lambda o: o.box.distance_to(point))


def _sequence_options(rng, correct: tuple) -> tuple:
    n = len(correct)
    total = len(TURN_LABELS) ** n
    if total - 1 <= 3:
        alts = [s for s in itertools.product(TURN_LABELS, repeat=n) if s != correct]
    else:
        alts = []
        while len(alts) < 3:
            cand = tuple(TURN_LABELS[int(i)] for i in rng.integers(len(TURN_LABELS), size=n))
            if cand != correct and cand not in alts:
                alts.append(cand)
    slot = int(rng.integers(len(alts) + 1))
    seqs = alts[:slot] + [correct] + alts[slot:]
    return tuple(", ".join(s) for s in seqs), slot


def gen_route_plan(
    scene: SceneMeta, traj: Trajectory, straight_thresh: float = STRAIGHT_THRESHOLD_DEG, rng=None
) -> Optional[QaSample]:
    if rng is None:
        rng = np.random.default_rng(0)
    if not scene.objects:
        return None
    anchors = traj.anchors
    turns = route_turns(anchors, straight_thresh)
    if not turns:
        return None
    start = nearest_object(anchors[0], scene.objects)
    goal = nearest_object(anchors[-1], scene.objects)
    marks = [nearest_object(anchors[i], scene.objects) for i, _, _ in turns]
    correct = tuple(action for _, _, action in turns)
    options, slot = _sequence_options(rng, correct)
    letter = LETTERS[slot]

    t = templates()["route_plan"]
    actions = []
    for k, mark in enumerate(marks):
        actions.append(t["action_forward"].format(index=2 * k + 1, landmark=mark.category))
        actions.append(t["action_blank"].format(index=2 * k + 2))
    actions.append(t["action_forward"].format(index=2 * len(marks) + 1, landmark=goal.category))

    used = []
    for o in [start, *marks, goal]:
        if o.id not in [u.id for u in used]:
            used.append(o)
    steps = [s.format(count=len(anchors)) for s in t["steps"]]
    steps += [
        t["turn"].format(landmark=m.category, angle=f"{angle:.1f}", action=action)
        for m, (_, angle, action) in zip(marks, turns)
    ]
    direct = t["direct"].format(sequence=", ".join(correct), letter=letter)
    return QaSample(
        scene_id=scene.scene_id,
        task="route_plan",
        question=t["question"].format(
            start=start.category, goal=goal.category, actions=" ".join(actions),
            options=_options_text(options),
        ),
        answer=letter,
        analysis=t["analysis"].format(start=start.category, goal=goal.category),
        direct=direct,
        groundings=tuple(_ground(o) for o in used),
        cot=_scaffold(steps, direct),
        options=options,
        cot_status="scaffold",
        oracle={
            "turns": [action for _, _, action in turns],
            "angles": [angle for _, angle, _ in turns],
            "landmarks": [m.id for m in marks],
        },
    )

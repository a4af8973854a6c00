import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gst.errors import InputError
from gst.evalkit import (
    acc_at,
    evaluate_records,
    exact_match,
    f1_at,
    format_report,
    iou3d,
    match_boxes,
    numeric_score,
)
from gst.respond import Grounding, ResponseAst, emit_response
from gst.scene import Aabb

from oracles import brute_force_f1, exact_iou, monte_carlo_iou

UNIT = Aabb((0, 0, 0), (1, 1, 1))


def shifted(box, dx=0.0, dy=0.0, dz=0.0):
    d = np.array([dx, dy, dz])
    return Aabb(tuple(np.add(box.min, d)), tuple(np.add(box.max, d)))


@st.composite
def grid_boxes(draw):
    lo = [draw(st.integers(0, 6)) * 0.5 for _ in range(3)]
    size = [draw(st.integers(1, 4)) * 0.5 for _ in range(3)]
    return Aabb(tuple(lo), tuple(np.add(lo, size)))


# ---------------------------------------------------------------------------
# IoU
# ---------------------------------------------------------------------------


def test_iou_examples():
    assert iou3d(UNIT, UNIT) == 1.0
    assert iou3d(UNIT, shifted(UNIT, 0.5)) == pytest.approx(1 / 3)
    assert iou3d(UNIT, shifted(UNIT, 2.0)) == 0.0
    flat = Aabb((0, 0, 0), (1, 1, 0))
    assert iou3d(flat, flat) == 0.0


def test_iou_monte_carlo():
    rng = np.random.default_rng(0)
    assert monte_carlo_iou(UNIT, shifted(UNIT, 0.5), 10**6, rng) == pytest.approx(iou3d(UNIT, shifted(UNIT, 0.5)), abs=1e-2)
    a, b = Aabb((0, 0, 0), (2, 1, 3)), Aabb((1, -0.5, 1), (3, 0.5, 2))
    assert monte_carlo_iou(a, b, 10**6, rng) == pytest.approx(iou3d(a, b), abs=1e-2)


@given(grid_boxes(), grid_boxes(), st.floats(0.1, 10), st.tuples(*[st.floats(-5, 5)] * 3))
def test_iou_properties(a, b, scale, t):
    v = iou3d(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(exact_iou(a, b), abs=1e-12)
    assert iou3d(b, a) == pytest.approx(v, abs=1e-12)
    ta, tb = shifted(a, *t), shifted(b, *t)
    assert iou3d(ta, tb) == pytest.approx(v, abs=1e-9)

    def scaled(x):
        return Aabb(tuple(np.multiply(x.min, scale)), tuple(np.multiply(x.max, scale)))

    assert iou3d(scaled(a), scaled(b)) == pytest.approx(v, abs=1e-9)


# ---------------------------------------------------------------------------
# Acc@k and F1@k
# ---------------------------------------------------------------------------


def test_acc_examples():
    gts = [UNIT, shifted(UNIT, 3), shifted(UNIT, 6)]
    assert acc_at(gts, gts, 0.5) == 1.0
    assert acc_at([None] * 3, gts, 0.25) == 0.0
    preds = [UNIT, shifted(UNIT, 3.1), shifted(UNIT, 9)]
    assert acc_at(preds, gts, 0.5) == pytest.approx(2 / 3, abs=1e-4)
    with pytest.raises(InputError):
        acc_at(preds[:2], gts, 0.5)


def test_acc_threshold_is_strict():
    # IoU exactly 1/3 does not pass a 1/3 threshold
    assert acc_at([shifted(UNIT, 0.5)], [UNIT], 1 / 3 + 1e-12) == 0.0
    assert acc_at([shifted(UNIT, 0.5)], [UNIT], 0.25) == 1.0


def test_f1_examples():
    boxes = [UNIT, shifted(UNIT, 3), shifted(UNIT, 6)]
    assert f1_at(boxes, boxes, 0.5) == 1.0
    assert f1_at([], boxes, 0.25) == 0.0
    assert f1_at(boxes, [], 0.25) == 0.0
    assert f1_at([], [], 0.25) == 0.0
    preds = [UNIT, shifted(UNIT, 20)]
    m = match_boxes(preds, boxes, 0.25)
    assert (m.tp, m.precision, round(m.recall, 4), m.f1) == (1, 0.5, 0.3333, pytest.approx(0.4))
    assert brute_force_f1(preds, boxes, 0.25) == pytest.approx(0.4)


def test_f1_prefers_more_pairs_over_greedy():
    # greedy on IoU pairs p0 with g0 and leaves p1 unmatched; optimal takes both
    g0, g1 = UNIT, shifted(UNIT, 0.5)
    p0, p1 = shifted(UNIT, 0.1), shifted(UNIT, -0.4)
    assert iou3d(p0, g0) > max(iou3d(p0, g1), iou3d(p1, g0))
    assert iou3d(p1, g1) < 0.25 < iou3d(p0, g1)
    m = match_boxes([p0, p1], [g0, g1], 0.25)
    assert m.tp == 2 and sorted(m.pairs) == [(0, 1), (1, 0)]


def test_matching_tie_breaks_on_total_iou():
    g = [UNIT, shifted(UNIT, 0.2)]
    p = [shifted(UNIT, 0.2), UNIT]
    m = match_boxes(p, g, 0.25)
    assert sorted(m.pairs) == [(0, 1), (1, 0)]


@settings(max_examples=40)
@given(st.lists(grid_boxes(), max_size=6), st.lists(grid_boxes(), max_size=6), st.sampled_from([0.1, 0.25, 0.5]))
def test_f1_matches_brute_force(preds, gts, thr):
    assert f1_at(preds, gts, thr) == pytest.approx(brute_force_f1(preds, gts, thr), abs=1e-12)


@given(st.lists(grid_boxes(), max_size=6), st.lists(grid_boxes(), max_size=6), st.randoms())
def test_f1_permutation_and_monotone(preds, gts, r):
    base = f1_at(preds, gts, 0.25)
    p2, g2 = preds[:], gts[:]
    r.shuffle(p2)
    r.shuffle(g2)
    assert f1_at(p2, g2, 0.25) == pytest.approx(base)
    values = [f1_at(preds, gts, t) for t in (0.0, 0.1, 0.25, 0.5, 0.75, 0.99)]
    assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# QA scoring
# ---------------------------------------------------------------------------


def test_exact_match_examples():
    assert exact_match("Brown", "brown") == 1
    assert exact_match(" on the table ", {"table", "on the table"}) == 1
    assert exact_match("chairs", "chair") == 0


def test_numeric_examples():
    assert numeric_score(3.0, 3.0) == 1.0
    assert numeric_score(6.0, 3.0) == 0.0
    assert numeric_score(1.2, 1.0) == pytest.approx(0.6)
    assert numeric_score(12.0, 10.0) == pytest.approx(0.6)
    with pytest.raises(InputError):
        numeric_score(1.0, 0.0)


@given(st.floats(0.01, 1000), st.floats(0, 3), st.floats(0, 3))
def test_numeric_monotone(gt, e1, e2):
    lo, hi = sorted([e1, e2])
    assert numeric_score(gt * (1 + lo), gt) >= numeric_score(gt * (1 + hi), gt)
    assert 0.0 <= numeric_score(gt * (1 - lo), gt) <= 1.0


# ---------------------------------------------------------------------------
# record evaluation
# ---------------------------------------------------------------------------


def _box_list(box):
    return [*box.min, *box.max]


def _records():
    a, b, c = UNIT, shifted(UNIT, 3), shifted(UNIT, 6)
    return [
        {"id": "s/room_size/0", "task": "room_size", "answer": "12.0", "numeric": True, "groundings": []},
        {
            "id": "s/rel_direction/0",
            "task": "rel_direction",
            "answer": "left",
            "numeric": False,
            "groundings": [
                {"name": "lamp", "count": 1, "boxes": [_box_list(a)]},
                {"name": "sofa", "count": 1, "boxes": [_box_list(b)]},
                {"name": "chair", "count": 2, "boxes": [_box_list(c), _box_list(shifted(c, 3))]},
            ],
        },
    ]


def test_evaluate_records_perfect_and_partial():
    recs = _records()
    perfect = {
        recs[0]["id"]: "<think>x</think><answer>12.0</answer>",
        recs[1]["id"]: emit_response(
            ResponseAst(
                "x",
                (
                    Grounding("Lamp", 1, (UNIT,)),
                    Grounding("sofa", 1, (shifted(UNIT, 3),)),
                    Grounding("chair", 2, (shifted(UNIT, 9), shifted(UNIT, 6))),
                ),
                "",
                "Left",
            )
        ),
    }
    rep = evaluate_records(recs, perfect)
    assert rep["numeric_score"] == 1.0 and rep["choice_accuracy"] == 1.0
    assert rep["acc25"] == rep["acc50"] == 1.0
    assert rep["f1_25"] == rep["f1_50"] == 1.0
    assert rep["single_grounding_samples"] == 2 and rep["multi_grounding_samples"] == 1

    partial = {recs[0]["id"]: "<think>x</think><answer>14.4 m</answer>", recs[1]["id"]: "garbage"}
    rep = evaluate_records(recs, partial)
    assert rep["numeric_score"] == pytest.approx(0.6)
    assert rep["choice_accuracy"] == 0.0
    assert rep["parse_errors"] == 1
    assert rep["acc50"] == 0.0 and rep["f1_50"] == 0.0

    rep = evaluate_records(recs, {})
    assert rep["missing"] == 2
    assert "acc50" in format_report(rep) and "n/a" not in format_report(rep)


def test_evaluate_zero_numeric_target():
    rec = [{"id": "a", "task": "abs_distance", "answer": "0.0", "numeric": True, "groundings": []}]
    assert evaluate_records(rec, {"a": "<think></think><answer>0</answer>"})["numeric_score"] == 1.0
    assert evaluate_records(rec, {"a": "<think></think><answer>0.1</answer>"})["numeric_score"] == 0.0

"""Grounding and QA metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from gst.errors import InputError
from gst.respond import parse_response
from gst.scene import Aabb

NUMERIC_THRESHOLDS = tuple(0.5 + 0.05 * i for i in range(10))


def iou3d(a: Aabb, b: Aabb) -> float:
    """Volumetric IoU of two axis-aligned boxes; 0 when the union has no volume."""
    lo = np.maximum(a.min, b.min)
    hi = np.minimum(a.max, b.max)
    inter = float(np.prod(np.clip(hi - lo, 0.0, None)))
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_matrix(preds, gts) -> np.ndarray:
    return np.array([[iou3d(p, g) for g in gts] for p in preds]).reshape(len(preds), len(gts))


def acc_at(preds, gts, thr: float) -> float:
    """Fraction of samples whose predicted box has IoU > ``thr`` with its target.

    ``preds[i]`` may be ``None`` (no prediction), which scores 0.
    """
    if len(preds) != len(gts):
        raise InputError(f"{len(preds)} predictions for {len(gts)} targets")
    if not gts:
        return 0.0
    hits = [p is not None and iou3d(p, g) > thr for p, g in zip(preds, gts)]
    return float(np.mean(hits))


@dataclass(frozen=True)
class MatchResult:
    tp: int
    precision: float
    recall: float
    f1: float
    pairs: tuple  # (pred index, gt index)


def match_boxes(preds, gts, thr: float) -> MatchResult:
    """Maximum-cardinality one-to-one matching over pairs with IoU > ``thr``.

    Among matchings of equal size the one with the larger total IoU wins.
    """
    preds, gts = list(preds), list(gts)
    if not preds or not gts:
        return MatchResult(0, 0.0, 0.0, 0.0, ())
    iou = iou_matrix(preds, gts)
    eligible = iou > thr
    # each eligible pair is worth more than any possible total IoU, so the
    # assignment maximizes the pair count first and total IoU second
    bonus = float(min(len(preds), len(gts)) + 1)
    score = np.where(eligible, bonus + iou, 0.0)
    rows, cols = linear_sum_assignment(score, maximize=True)
    pairs = tuple((int(r), int(c)) for r, c in zip(rows, cols) if eligible[r, c])
    tp = len(pairs)
    precision = tp / len(preds)
    recall = tp / len(gts)
    f1 = 0.0 if tp == 0 else 2 * precision * recall / (precision + recall)
    return MatchResult(tp, precision, recall, f1, pairs)


def f1_at(preds, gts, thr: float) -> float:
    return match_boxes(preds, gts, thr).f1


def exact_match(pred: str, gt) -> int:
    """1 if ``pred`` equals ``gt`` (or any alias in it) after trimming and case folding."""
    aliases = [gt] if isinstance(gt, str) else list(gt)
    p = str(pred).strip().casefold()
    return int(any(p == str(a).strip().casefold() for a in aliases))


def numeric_score(pred: float, gt: float) -> float:
    """Mean over θ in {0.50, ..., 0.95} of ``|pred - gt| / gt < 1 - θ``."""
    if not gt > 0:
        raise InputError("numeric ground truth must be positive")
    # rounded to absorb representation error in e.g. 1.2 - 1.0
    rel = round(abs(float(pred) - gt) / gt, 12)
    if not np.isfinite(rel):
        return 0.0
    return float(np.mean([rel < round(1.0 - t, 12) for t in NUMERIC_THRESHOLDS]))


@dataclass
class GroundingEval:
    ious: list
    acc25: float
    acc50: float
    f1_25: float
    f1_50: float


def evaluate_grounding(single_preds, single_gts, multi_preds, multi_gts) -> GroundingEval:
    """Aggregate single-object Acc@k and mean per-sample multi-object F1@k."""
    ious = [0.0 if p is None else iou3d(p, g) for p, g in zip(single_preds, single_gts)]
    f1_25 = [f1_at(p, g, 0.25) for p, g in zip(multi_preds, multi_gts)]
    f1_50 = [f1_at(p, g, 0.5) for p, g in zip(multi_preds, multi_gts)]
    return GroundingEval(
        ious=ious,
        acc25=acc_at(single_preds, single_gts, 0.25),
        acc50=acc_at(single_preds, single_gts, 0.5),
        f1_25=float(np.mean(f1_25)) if f1_25 else 0.0,
        f1_50=float(np.mean(f1_50)) if f1_50 else 0.0,
    )


# ---------------------------------------------------------------------------
# record-level evaluation (dataset JSONL + predictions)
# ---------------------------------------------------------------------------


def _record_boxes(groundings) -> list:
    return [
        (str(g["name"]).strip().casefold(), [Aabb.from_corners(b[:3], b[3:]) for b in g["boxes"]])
        for g in groundings
    ]


def _parse_number(text: str):
    try:
        v = float(str(text).strip().split()[0])
    except (ValueError, IndexError):
        return None
    return v if np.isfinite(v) else None


def _score_answer(pred: str, gt: dict) -> float:
    if not gt.get("numeric"):
        return float(exact_match(pred, gt["answer"]))
    value, target = _parse_number(pred), float(gt["answer"])
    if value is None:
        return 0.0
    if target == 0:
        # zero targets (coincident centroids) admit no relative error
        return float(value == 0)
    return numeric_score(value, target)


def _mean(xs):
    return float(np.mean(xs)) if xs else None


def evaluate_records(gt_records, predictions: dict) -> dict:
    """Score predictions (id -> response text) against generated ground truth.

    Single-object grounding: every ground-truth entry holding one box is
    looked up by name in the prediction (first box of the first entry with
    that name).  Multi-object grounding: every record with at least two boxes
    compares all predicted boxes against all ground-truth boxes.
    Unparseable or missing predictions score 0 everywhere.
    """
    single_p, single_g, multi_p, multi_g = [], [], [], []
    by_task: dict = {}
    numeric, choice = [], []
    missing = parse_errors = 0
    for rec in gt_records:
        text = predictions.get(rec["id"])
        pred_answer, pred_boxes = "", []
        if text is None:
            missing += 1
        else:
            res = parse_response(text)
            if res.ast is None or res.errors:
                parse_errors += 1
            if res.ast is not None:
                pred_answer = res.ast.answer
                pred_boxes = [(g.name.strip().casefold(), list(g.boxes)) for g in res.ast.groundings]
        score = _score_answer(pred_answer, rec)
        (numeric if rec.get("numeric") else choice).append(score)
        by_task.setdefault(rec["task"], []).append(score)

        gt_boxes = _record_boxes(rec.get("groundings", []))
        lookup: dict = {}
        for name, boxes in pred_boxes:
            lookup.setdefault(name, boxes)
        for name, boxes in gt_boxes:
            if len(boxes) == 1:
                found = lookup.get(name)
                single_p.append(found[0] if found else None)
                single_g.append(boxes[0])
        all_gt = [b for _, boxes in gt_boxes for b in boxes]
        if len(all_gt) >= 2:
            multi_p.append([b for _, boxes in pred_boxes for b in boxes])
            multi_g.append(all_gt)

    ground = evaluate_grounding(single_p, single_g, multi_p, multi_g)
    return {
        "records": len(gt_records),
        "missing": missing,
        "parse_errors": parse_errors,
        "numeric_score": _mean(numeric),
        "choice_accuracy": _mean(choice),
        "acc25": ground.acc25 if single_g else None,
        "acc50": ground.acc50 if single_g else None,
        "f1_25": ground.f1_25 if multi_g else None,
        "f1_50": ground.f1_50 if multi_g else None,
        "single_grounding_samples": len(single_g),
        "multi_grounding_samples": len(multi_g),
        "by_task": {t: {"n": len(v), "score": float(np.mean(v))} for t, v in sorted(by_task.items())},
    }


def format_report(report: dict) -> str:
    """Human-readable metrics table."""
    rows = [("metric", "value")]
    for key in ("records", "missing", "parse_errors", "numeric_score", "choice_accuracy",
                "acc25", "acc50", "f1_25", "f1_50"):
        v = report[key]
        rows.append((key, "n/a" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v))))
    for task, stats in report["by_task"].items():
        rows.append((f"task {task} (n={stats['n']})", f"{stats['score']:.4f}"))
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{a.ljust(width)}  {b}" for a, b in rows)

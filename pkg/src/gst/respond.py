"""Grounded response grammar: ``<think> ... </think><answer> ... </answer>``.

The think body is split into three parts::

    ANALYSIS            first paragraph (or text before the grounding line)
    GROUNDINGS          NAME COUNT <bbox>(x1, y1, z1, x2, y2, z2)</bbox>..., ...
    REASONING           everything after the last grounding box

Canonical emission (the bit-exact reference) is::

    <think>ANALYSIS\\n\\nGROUNDINGS\\n\\nREASONING</think>\\n<answer>ANSWER</answer>

with empty parts and their separators left out (the analysis slot is kept
whenever reasoning follows without groundings).  Coordinates print with four
decimals; a grounding with several boxes lists them space-separated.  See
``docs/grammar.md`` for the EBNF.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from gst.scene import Aabb

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
BBOX_OPEN, BBOX_CLOSE = "<bbox>", "</bbox>"

_FLOAT = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_NAME_COUNT = re.compile(r"(?P<name>[^\n]*\S)\s+(?P<count>\d+)")
_PARAGRAPH = re.compile(r"\n[ \t]*\n")


@dataclass(frozen=True)
class Grounding:
    name: str
    count: int
    boxes: tuple

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))


@dataclass(frozen=True)
class ResponseAst:
    analysis: str
    groundings: tuple
    reasoning: str
    answer: str

    def __post_init__(self):
        object.__setattr__(self, "groundings", tuple(self.groundings))


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    kind: str  # "structure" | "tuple" | "count" | "text"
    message: str
    offset: int  # byte offset into the UTF-8 input

    def __str__(self):
        return f"{self.severity}[{self.kind}]@{self.offset}: {self.message}"


@dataclass
class ParseResult:
    ast: Optional[ResponseAst]
    diagnostics: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.ast is not None

    @property
    def errors(self) -> list:
        return [d for d in self.diagnostics if d.severity == "error"]

    @property
    def warnings(self) -> list:
        return [d for d in self.diagnostics if d.severity == "warning"]


class _Failure(Exception):
    def __init__(self, diag: Diagnostic):
        self.diag = diag


def _parse_tuple(raw: str):
    inner = raw.strip()
    if not (inner.startswith("(") and inner.endswith(")")):
        return None
    parts = [p.strip() for p in inner[1:-1].split(",")]
    if len(parts) != 6 or not all(_FLOAT.fullmatch(p) for p in parts):
        return None
    v = [float(p) for p in parts]
    return Aabb.from_corners(v[:3], v[3:])


def parse_response(text: str) -> ParseResult:
    """Parse a model response.  Never raises; failures come back as diagnostics."""
    diags: list = []

    def offset(i: int) -> int:
        return len(text[:i].encode("utf-8"))

    def fail(kind, message, i):
        raise _Failure(Diagnostic("error", kind, message, offset(i)))

    def warn(kind, message, i):
        diags.append(Diagnostic("warning", kind, message, offset(i)))

    try:
        t0 = text.find(THINK_OPEN)
        if t0 < 0:
            fail("structure", "missing <think>", 0)
        if text[:t0].strip():
            warn("text", "text before <think> ignored", 0)
        body_start = t0 + len(THINK_OPEN)
        t1 = text.find(THINK_CLOSE, body_start)
        if t1 < 0:
            fail("structure", "unterminated <think>", t0)

        pos = t1 + len(THINK_CLOSE)
        answers = []
        while True:
            a0 = text.find(ANSWER_OPEN, pos)
            if a0 < 0:
                break
            a1 = text.find(ANSWER_CLOSE, a0 + len(ANSWER_OPEN))
            if a1 < 0:
                fail("structure", "unterminated <answer>", a0)
            if answers or text[pos:a0].strip():
                warn("text", "unexpected text or repeated <answer> block", pos)
            answers.append(text[a0 + len(ANSWER_OPEN) : a1])
            pos = a1 + len(ANSWER_CLOSE)
        if not answers:
            fail("structure", "missing <answer>", t1 + len(THINK_CLOSE))
        if text[pos:].strip():
            warn("text", "text after the last </answer> ignored", pos)

        analysis, groundings, reasoning = _parse_body(text, body_start, t1, fail, warn)
        ast = ResponseAst(analysis, tuple(groundings), reasoning, answers[-1].strip())
        return ParseResult(ast, diags)
    except _Failure as exc:
        diags.append(exc.diag)
        return ParseResult(None, diags)


def _parse_body(text, start, end, fail, warn):
    first = text.find(BBOX_OPEN, start, end)
    if first < 0:
        stray = text.find(BBOX_CLOSE, start, end)
        if stray >= 0:
            fail("structure", "</bbox> without <bbox>", stray)
        parts = _PARAGRAPH.split(text[start:end], maxsplit=1)
        return parts[0].strip(), [], (parts[1].strip() if len(parts) > 1 else "")

    line_start = max(text.rfind("\n", start, first) + 1, start)
    groundings = []
    names, counts, boxes = [], [], []
    pos = line_start
    while True:
        b0 = text.find(BBOX_OPEN, pos, end)
        if b0 < 0:
            break
        seg = text[pos:b0]
        if names and _PARAGRAPH.search(seg):
            warn("text", "box markup after the grounding block left in reasoning", b0)
            break
        b1 = text.find(BBOX_CLOSE, b0, end)
        if b1 < 0:
            fail("structure", "unterminated <bbox>", b0)
        box = _parse_tuple(text[b0 + len(BBOX_OPEN) : b1])
        if box is None:
            fail("tuple", "bounding box must be a tuple of 6 numbers", b0)
        label = seg.strip()
        if label.startswith(","):
            label = label[1:].strip()
        if label:
            m = _NAME_COUNT.fullmatch(label)
            if m is None:
                fail("structure", "expected 'NAME COUNT' before <bbox>", pos)
            names.append((m.group("name"), pos))
            counts.append(int(m.group("count")))
            boxes.append([box])
        elif names:
            boxes[-1].append(box)
        else:
            fail("structure", "<bbox> without a preceding 'NAME COUNT'", b0)
        pos = b1 + len(BBOX_CLOSE)

    for (name, at), count, bxs in zip(names, counts, boxes):
        if count < 1 or count != len(bxs):
            warn("count", f"{name!r} states count {count} but lists {len(bxs)} boxes", at)
        groundings.append(Grounding(name, count, tuple(bxs)))
    analysis = text[start:line_start].strip()
    reasoning = text[pos:end].strip()
    if reasoning.startswith(","):
        reasoning = reasoning[1:].lstrip()
    return analysis, groundings, reasoning


def format_box(box: Aabb) -> str:
    coords = ", ".join(f"{v:.4f}" for v in (*box.min, *box.max))
    return f"{BBOX_OPEN}({coords}){BBOX_CLOSE}"


def format_groundings(groundings) -> str:
    return ", ".join(
        f"{g.name} {g.count} " + " ".join(format_box(b) for b in g.boxes) for g in groundings
    )


def emit_think_body(analysis: str, groundings, reasoning: str) -> str:
    if groundings:
        parts = [p for p in (analysis, format_groundings(groundings), reasoning) if p]
    else:
        parts = [analysis, reasoning] if reasoning else [analysis]
    return "\n\n".join(parts)


def emit_response(ast: ResponseAst) -> str:
    """Canonical text for ``ast``; ``parse_response`` inverts it."""
    body = emit_think_body(ast.analysis, ast.groundings, ast.reasoning)
    return f"{THINK_OPEN}{body}{THINK_CLOSE}\n{ANSWER_OPEN}{ast.answer}{ANSWER_CLOSE}"

"""CoT writer client: an OpenAI-style chat endpoint or an offline mock.

The prompt sends the question, its known answer, the analysis sentence and
the grounded object annotations, together with a BEV image of the scene.
The reply must follow the grounded answer grammar and reach the known
answer; only its reasoning part is kept.
"""

from __future__ import annotations

import base64
import logging
import os
import threading
import time
from dataclasses import dataclass, replace
from typing import Optional

import httpx

from gst.errors import CotRequestError, CotValidationError, InputError
from gst.evalkit import exact_match
from gst.gcot.bev import BevImage
from gst.gcot.metadata import templates
from gst.gcot.tasks import QaSample, assemble_answer
from gst.respond import format_box, parse_response

log = logging.getLogger(__name__)

ENV_URL = "GST_LLM_URL"
ENV_KEY = "GST_LLM_KEY"
BACKENDS = ("mock", "http")
RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class LlmConfig:
    backend: str = "mock"
    url: Optional[str] = None
    key: Optional[str] = None
    model: str = "gpt-4o"
    timeout: float = 60.0
    attempts: int = 3
    backoff: float = 1.0  # seconds before the 2nd attempt, doubled after
    max_in_flight: int = 4

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise InputError(f"unknown LLM backend {self.backend!r}; choose from {BACKENDS}")
        if self.attempts < 1 or self.max_in_flight < 1:
            raise InputError("attempts and max_in_flight must be >= 1")

    @classmethod
    def from_env(cls, backend: str = "mock", env=None, **overrides) -> "LlmConfig":
        env = os.environ if env is None else env
        cfg = cls(backend=backend, url=env.get(ENV_URL), key=env.get(ENV_KEY))
        return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def build_prompt(qa: QaSample, color_key: dict) -> tuple:
    """``(system, user)`` prompt texts for one sample."""
    t = templates()["cot_prompt"]
    lines = []
    for g in qa.groundings:
        color = color_key.get(g.name)
        tag = "" if color is None else " [rgb({}, {}, {})]".format(*color)
        lines.append(f"- {g.name} {g.count}{tag}: " + " ".join(format_box(b) for b in g.boxes))
    user = t["user"].format(
        question=qa.question,
        answer=qa.answer,
        analysis=qa.analysis,
        annotations="\n".join(lines) if lines else "(none)",
    )
    return t["system"], user


def validate_cot(text: str, qa: QaSample) -> str:
    """Reasoning text of a reply, after checking it against the known answer."""
    result = parse_response(text)
    if not result.ok:
        raise CotValidationError("; ".join(str(d) for d in result.errors))
    ast = result.ast
    if not exact_match(ast.answer, qa.answer):
        raise CotValidationError(f"reply answers {ast.answer!r}, expected {qa.answer!r}")
    if not ast.reasoning.strip():
        raise CotValidationError("reply has no reasoning steps")
    if qa.groundings and not ast.groundings:
        raise CotValidationError("reply drops the object groundings")
    return ast.reasoning


class MockBackend:
    """Offline stand-in: answers with the generator's own CoT scaffold."""

    def complete(self, system: str, user: str, image_png: bytes, qa: QaSample) -> str:
        steps = qa.cot or qa.direct
        return assemble_answer(qa.analysis, qa.groundings, steps, qa.answer)

    def close(self):
        pass


class HttpBackend:
    """Chat-completions client with retries and a bound on concurrent requests."""

    def __init__(self, config: LlmConfig, transport=None, sleep=time.sleep):
        if not config.url:
            raise InputError(f"HTTP backend needs an endpoint URL (set {ENV_URL})")
        self.config = config
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        headers = {"Authorization": f"Bearer {config.key}"} if config.key else {}
        self._client = httpx.Client(
            base_url=config.url.rstrip("/"), headers=headers, timeout=config.timeout, transport=transport
        )

    def _payload(self, system: str, user: str, image_png: bytes) -> dict:
        data_url = "data:image/png;base64," + base64.b64encode(image_png).decode("ascii")
        return {
            "model": self.config.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": user},
                        {"type": "image_url", "image_url": {"url": data_url}},
                    ],
                },
            ],
        }

    def complete(self, system: str, user: str, image_png: bytes, qa: QaSample = None) -> str:
        payload = self._payload(system, user, image_png)
        last = None
        for attempt in range(self.config.attempts):
            if attempt:
                self._sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._client.post("/chat/completions", json=payload)
            except httpx.TransportError as exc:
                last = exc
                log.warning("CoT request attempt %d failed: %s", attempt + 1, exc)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last = f"HTTP {resp.status_code}"
                log.warning("CoT request attempt %d failed: %s", attempt + 1, last)
                continue
            if resp.status_code != 200:
                raise CotRequestError(f"endpoint returned HTTP {resp.status_code}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise CotValidationError(f"unexpected response body: {exc}") from exc
        raise CotRequestError(f"gave up after {self.config.attempts} attempts: {last}")

    def close(self):
        self._client.close()


def make_backend(config: LlmConfig, transport=None):
    if config.backend == "mock":
        return MockBackend()
    return HttpBackend(config, transport=transport)


def request_cot(backend, bev: BevImage, qa: QaSample) -> str:
    """Validated CoT reasoning for ``qa``; raises CotRequestError / CotValidationError."""
    system, user = build_prompt(qa, bev.color_key)
    text = backend.complete(system, user, bev.to_png(), qa)
    return validate_cot(text, qa)

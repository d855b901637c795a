"""Chat-completion backends: a live HTTP client and a deterministic script.

Both implement ``complete(request) -> CompletionResult`` and raise
``BackendError`` on failure, so the debate engine never needs to know
which one it is talking to.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import httpx
import yaml

from .config import ModelConfig
from .errors import BackendError, ContextOverflow, MissingKey, ParseError
from .persistence import load_trace
from .prompts import SUMMARISER_NAME
from .records import ChatMessage, DebateTrace, Phase, Role

log = logging.getLogger(__name__)

API_KEY_ENV = "ADEPT_API_KEY"
SCRIPT_FORMAT = "adept-script/1"
BACKOFF_BASE = 1.0
BACKOFF_FACTOR = 2.0
SCRIPTED_PHASES = (Phase.OPENING, Phase.REBUTTAL, Phase.BALLOT)


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    model_id: str
    temperature: float
    max_output_tokens: int
    # routing metadata for the scripted backend; never sent over the wire
    persona_name: str = ""
    phase: Phase | None = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a completion request needs at least one message")
        if self.messages[0].role is not Role.SYSTEM:
            raise ValueError("the first message of a completion request must be the system message")

    @property
    def prompt_hash(self) -> str:
        return prompt_hash(self.messages)


@dataclass(frozen=True)
class CompletionResult:
    text: str
    finish_reason: str = "stop"
    token_usage: dict[str, int] | None = None

    def __post_init__(self) -> None:
        if self.finish_reason not in ("stop", "length", "other"):
            raise ValueError(f"unknown finish_reason {self.finish_reason!r}")
        if self.finish_reason == "stop" and not self.text:
            raise ValueError("a completed response must have text")


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResult: ...


def prompt_hash(messages) -> str:
    payload = json.dumps(
        [[m.role.value, m.content] for m in messages], ensure_ascii=False, separators=(",", ":")
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# -- live -----------------------------------------------------------------

_FINISH_MAP = {"stop": "stop", "length": "length"}
_OVERFLOW_MARKERS = ("context_length_exceeded", "maximum context length", "context window")


class LiveBackend:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint.

    Retries transport errors, timeouts and rate limits with exponential
    backoff (base 1 s, factor 2, full jitter). ``sleep`` and ``rng`` are
    injectable so tests can run without waiting.
    """

    def __init__(
        self,
        config: ModelConfig,
        api_key: str | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        if not config.endpoint_url:
            raise ValueError("live backend needs an endpoint_url")
        self.config = config
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise BackendError("auth", f"environment variable {API_KEY_ENV} is not set")
        self.client = client or httpx.Client(timeout=config.request_timeout)
        self.sleep = sleep
        self.rng = rng or random.Random()
        self.attempts = 0

    def _payload(self, request: CompletionRequest) -> dict[str, Any]:
        return {
            "model": request.model_id,
            "messages": [{"role": m.role.value, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

    def _send_once(self, request: CompletionRequest) -> CompletionResult:
        self.attempts += 1
        try:
            resp = self.client.post(
                self.config.endpoint_url,
                json=self._payload(request),
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.config.request_timeout,
            )
        except httpx.TimeoutException as exc:
            raise BackendError("timeout", f"request timed out: {exc}") from exc
        except httpx.TransportError as exc:
            raise BackendError("transport", f"{type(exc).__name__}: {exc}") from exc

        status = resp.status_code
        if status in (401, 403):
            raise BackendError("auth", f"HTTP {status}")
        if status == 429:
            raise BackendError("rate_limited", f"HTTP 429: {resp.text[:200]}")
        if status >= 500:
            raise BackendError("transport", f"HTTP {status}: {resp.text[:200]}")
        if status >= 400:
            body = resp.text
            if any(marker in body.lower() for marker in _OVERFLOW_MARKERS):
                raise ContextOverflow(f"HTTP {status}: {body[:200]}")
            raise BackendError("malformed_response", f"request rejected, HTTP {status}: {body[:200]}")
        return self._parse(resp)

    @staticmethod
    def _parse(resp: httpx.Response) -> CompletionResult:
        try:
            body = resp.json()
            choice = body["choices"][0]
            text = choice["message"]["content"]
            raw_finish = choice.get("finish_reason")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError("malformed_response", f"unexpected response body: {exc!r}") from exc
        if not isinstance(text, str):
            raise BackendError("malformed_response", "choice content is not text")
        finish = _FINISH_MAP.get(raw_finish, "other")
        if finish == "stop" and not text:
            raise BackendError("malformed_response", "empty completion text")
        usage = body.get("usage") if isinstance(body, dict) else None
        token_usage = None
        if isinstance(usage, dict):
            token_usage = {
                "prompt": int(usage.get("prompt_tokens", 0)),
                "completion": int(usage.get("completion_tokens", 0)),
            }
        return CompletionResult(text=text, finish_reason=finish, token_usage=token_usage)

    def complete(self, request: CompletionRequest) -> CompletionResult:
        retries = self.config.max_retries
        for attempt in range(retries + 1):
            try:
                return self._send_once(request)
            except BackendError as exc:
                if not exc.retryable or attempt == retries:
                    raise
                delay = self.rng.uniform(0.0, BACKOFF_BASE * BACKOFF_FACTOR**attempt)
                log.warning("retrying after %s (attempt %d, sleeping %.2fs)", exc, attempt + 1, delay)
                self.sleep(delay)
        raise AssertionError("unreachable")


# -- scripted -------------------------------------------------------------

@dataclass
class ScriptEntry:
    text: str
    finish_reason: str = "stop"
    prompt_sha256: str | None = None


@dataclass
class ScriptedBackend:
    """Serves recorded responses keyed by (persona, phase, occurrence).

    With ``strict`` set, entries that carry a ``prompt_sha256`` must match
    the hash of the incoming prompt. A missing summary entry falls back to
    a fixed placeholder so dialogue-only fixtures still run end to end.
    """

    responses: dict[tuple[str, str], list[ScriptEntry]]
    strict: bool = False
    default_summary: str | None = "(scripted backend: no summary recorded)"
    _served: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __len__(self) -> int:
        return sum(len(v) for k, v in self.responses.items() if k[1] != Phase.SUMMARY.value)

    def complete(self, request: CompletionRequest) -> CompletionResult:
        phase = request.phase.value if request.phase is not None else ""
        key = (request.persona_name, phase)
        with self._lock:
            queue = self.responses.get(key, [])
            index = self._served.get(key, 0)
            if index >= len(queue):
                if phase == Phase.SUMMARY.value and self.default_summary and not queue:
                    return CompletionResult(self.default_summary)
                raise BackendError(
                    "script_exhausted",
                    f"no response #{index + 1} for ({request.persona_name}, {phase})",
                )
            self._served[key] = index + 1
            entry = queue[index]
        if self.strict and entry.prompt_sha256 and entry.prompt_sha256 != request.prompt_hash:
            raise BackendError(
                "malformed_response",
                f"prompt hash mismatch for ({request.persona_name}, {phase}) #{index + 1}",
            )
        return CompletionResult(entry.text, finish_reason=entry.finish_reason)


def _entry(raw: Any, where: str, source: str) -> ScriptEntry:
    if isinstance(raw, str):
        return ScriptEntry(raw)
    if isinstance(raw, dict) and isinstance(raw.get("text"), str):
        unknown = set(raw) - {"text", "finish_reason", "prompt_sha256"}
        if unknown:
            raise ParseError(f"{where}: unknown keys {sorted(unknown)}", source)
        return ScriptEntry(raw["text"], raw.get("finish_reason", "stop"), raw.get("prompt_sha256"))
    raise ParseError(f"{where}: a response must be text or a mapping with 'text'", source)


def script_from_document(doc: Any, source: str = "<script>", strict: bool = False) -> ScriptedBackend:
    """Build a backend from a parsed ``adept-script/1`` document.

    Layout::

        format: adept-script/1
        responses:
          <persona name>:
            opening: [text, ...]
            rebuttal: [text, ...]
            ballot: [text, ...]      # a second entry serves the corrective retry
        summary: [text]              # optional
    """
    if not isinstance(doc, dict) or doc.get("format") != SCRIPT_FORMAT:
        raise ParseError(f"not an {SCRIPT_FORMAT} document", source)
    unknown = set(doc) - {"format", "responses", "summary"}
    if unknown:
        raise ParseError(f"unknown top-level keys {sorted(unknown)}", source)
    personas = doc.get("responses")
    if not isinstance(personas, dict) or not personas:
        raise ParseError("'responses' must be a non-empty mapping of persona name to phases", source)
    responses: dict[tuple[str, str], list[ScriptEntry]] = {}
    for name, phases in personas.items():
        if not isinstance(phases, dict):
            raise ParseError(f"responses for {name!r} must be a mapping of phase to list", source)
        bad = set(phases) - {p.value for p in SCRIPTED_PHASES}
        if bad:
            raise ParseError(f"{name!r}: unknown phases {sorted(bad)}", source)
        for phase in SCRIPTED_PHASES:
            items = phases.get(phase.value)
            if not items:
                raise MissingKey(f"{source}: no {phase.value} response for {name!r}")
            if not isinstance(items, list):
                items = [items]
            responses[(str(name), phase.value)] = [
                _entry(x, f"{name}/{phase.value}[{i}]", source) for i, x in enumerate(items)
            ]
    summary = doc.get("summary")
    if summary:
        items = summary if isinstance(summary, list) else [summary]
        responses[(SUMMARISER_NAME, Phase.SUMMARY.value)] = [
            _entry(x, f"summary[{i}]", source) for i, x in enumerate(items)
        ]
    return ScriptedBackend(responses, strict=strict)


def script_from_trace(trace: DebateTrace, strict: bool = False) -> ScriptedBackend:
    """A backend that replays every call recorded in ``trace``, in order."""
    responses: dict[tuple[str, str], list[ScriptEntry]] = {}

    def add(name: str, phase: Phase, prompt, text: str, finish: str) -> None:
        responses.setdefault((name, phase.value), []).append(
            ScriptEntry(text, finish, prompt_hash(prompt.messages))
        )

    for u in trace.utterances:
        add(u.persona_name, u.phase, u.prompt, u.response, u.finish_reason)
    for b in trace.ballots:
        for attempt in b.history:
            add(b.persona_name, Phase.BALLOT, attempt.prompt, attempt.response, attempt.finish_reason)
    if trace.summary_prompt is not None and trace.summary_text:
        add(trace.summary_prompt.persona_name, Phase.SUMMARY, trace.summary_prompt, trace.summary_text, "stop")
    return ScriptedBackend(responses, strict=strict, default_summary=None)


def load_script(source: str | os.PathLike | DebateTrace, strict: bool = False) -> ScriptedBackend:
    """Load a scripted backend from a fixture file, a trace file or a trace object."""
    if isinstance(source, DebateTrace):
        return script_from_trace(source, strict)
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read script: {exc}", path) from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed script: {exc}", path) from exc
    if isinstance(doc, dict) and "format_version" in doc:
        return script_from_trace(load_trace(path), strict)
    return script_from_document(doc, str(path), strict)

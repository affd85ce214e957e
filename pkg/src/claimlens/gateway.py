"""Single doorway to chat-completion models.

Three interchangeable backends sit behind one `LlmGateway`:

* `HttpBackend`   — OpenAI-compatible chat-completions endpoint with retry,
                    exponential backoff, and bearer auth from an env var.
* `ReplayBackend` — deterministic playback of a recorded transcript;
                    unknown requests raise ReplayMiss. Zero network I/O.
* `ScriptedBackend` — responses produced by a caller-supplied function;
                    used by tests and mock experiment runs.

The gateway bounds in-flight concurrency, serializes transcript writes, and
can record every (digest, request, response) pair to a JSON-lines transcript
that `ReplayBackend` replays byte-for-byte.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import requests

from .errors import AuthError, EmptySplit, RateLimited, ReplayMiss, TransportError
from .textutil import estimate_tokens, stable_hash

log = logging.getLogger(__name__)

Role = str  # system | user | assistant


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[tuple[Role, str], ...]
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not any(role == "user" for role, _ in self.messages):
            raise ValueError("at least one user message required")

    def to_json_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ChatRequest":
        return cls(
            model_id=d["model_id"],
            messages=tuple((m["role"], m["content"]) for m in d["messages"]),
            temperature=d.get("temperature", 0.0),
            max_output_tokens=d.get("max_output_tokens", 1024),
        )


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str = "stop"
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0
    attempts: int = 1

    def to_json_dict(self) -> dict:
        return {
            "content": self.content,
            "finish_reason": self.finish_reason,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "latency_ms": self.latency_ms,
            "attempts": self.attempts,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ChatResponse":
        return cls(
            content=d["content"],
            finish_reason=d.get("finish_reason", "stop"),
            prompt_tokens=d.get("prompt_tokens", 0),
            completion_tokens=d.get("completion_tokens", 0),
            latency_ms=d.get("latency_ms", 0),
            attempts=d.get("attempts", 1),
        )


def request_digest(request: ChatRequest) -> str:
    """Replay key: hashes model, messages, and temperature only, so recorded
    latency/usage never affect matching."""
    payload = json.dumps(
        {
            "model_id": request.model_id,
            "messages": [[r, c] for r, c in request.messages],
            "temperature": request.temperature,
        },
        ensure_ascii=False,
        separators=(",", ":"),
        sort_keys=True,
    )
    return stable_hash(payload, length=64)


# --------------------------------------------------------------------------
# backends
# --------------------------------------------------------------------------


@dataclass
class RetryPolicy:
    max_attempts: int = 5
    backoff_base_s: float = 1.0
    backoff_cap_s: float = 30.0
    wallclock_budget_s: float = 120.0

    def delay(self, attempt: int) -> float:
        # attempt is 1-based; first retry waits base seconds
        return min(self.backoff_base_s * (2 ** (attempt - 1)), self.backoff_cap_s)


class HttpBackend:
    """Live OpenAI-compatible chat-completions endpoint."""

    def __init__(
        self,
        endpoint: str,
        api_key_env: str = "LLM_API_KEY",
        retry: RetryPolicy | None = None,
        timeout_s: float = 120.0,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.retry = retry or RetryPolicy()
        self.timeout_s = timeout_s
        self.session = session or requests.Session()
        self._sleep = sleep

    def _headers(self) -> dict:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise AuthError(f"no API key in environment variable {self.api_key_env}")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model_id,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = self._headers()
        started = time.monotonic()
        last_error = "no attempt made"
        rate_limited = False
        attempt = 0
        while attempt < self.retry.max_attempts:
            attempt += 1
            try:
                resp = self.session.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_error = f"transport failure: {exc}"
                rate_limited = False
            else:
                if resp.status_code in (401, 403):
                    raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
                if resp.status_code == 200:
                    return self._parse(resp, attempt, started)
                last_error = f"HTTP {resp.status_code}"
                rate_limited = resp.status_code == 429
                if not (rate_limited or resp.status_code >= 500):
                    raise TransportError(f"unexpected response: HTTP {resp.status_code}")
            if attempt >= self.retry.max_attempts:
                break
            delay = self.retry.delay(attempt)
            elapsed = time.monotonic() - started
            if elapsed + delay > self.retry.wallclock_budget_s:
                last_error += " (wall-clock budget exhausted)"
                break
            self._sleep(delay)
        if rate_limited:
            raise RateLimited(f"gave up after {attempt} attempts: {last_error}")
        raise TransportError(f"gave up after {attempt} attempts: {last_error}")

    def _parse(self, resp: requests.Response, attempts: int, started: float) -> ChatResponse:
        try:
            body = resp.json()
            choice = body["choices"][0]
            usage = body.get("usage", {})
            return ChatResponse(
                content=choice["message"]["content"] or "",
                finish_reason=choice.get("finish_reason", "stop"),
                prompt_tokens=usage.get("prompt_tokens", 0),
                completion_tokens=usage.get("completion_tokens", 0),
                latency_ms=int((time.monotonic() - started) * 1000),
                attempts=attempts,
            )
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from None


class ReplayBackend:
    """Serves recorded responses keyed by request digest; never touches the
    network. Duplicate digests in the transcript resolve last-write-wins."""

    def __init__(self, transcript_path: Path):
        self.transcript_path = Path(transcript_path)
        self._responses: dict[str, ChatResponse] = {}
        self._load()

    def _load(self) -> None:
        seen: set[str] = set()
        with open(self.transcript_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                digest = entry["digest"]
                if digest in seen:
                    log.warning(
                        "transcript %s: duplicate digest %s, keeping the later entry",
                        self.transcript_path,
                        digest,
                    )
                seen.add(digest)
                self._responses[digest] = ChatResponse.from_json_dict(entry["response"])

    def complete(self, request: ChatRequest) -> ChatResponse:
        digest = request_digest(request)
        if digest not in self._responses:
            raise ReplayMiss(digest)
        return self._responses[digest]


class ScriptedBackend:
    """Backend driven by a plain function; the mock backend for tests and
    offline experiment runs."""

    def __init__(self, script: Callable[[ChatRequest], str | ChatResponse]):
        self.script = script
        self.calls = 0

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.calls += 1
        result = self.script(request)
        if isinstance(result, ChatResponse):
            return result
        return ChatResponse(content=result)


# --------------------------------------------------------------------------
# gateway
# --------------------------------------------------------------------------


class _TokenBudget:
    """Sliding one-minute token budget; 0 disables the limit."""

    def __init__(self, tokens_per_minute: int, sleep: Callable[[float], None] = time.sleep):
        self.tokens_per_minute = tokens_per_minute
        self._window: list[tuple[float, int]] = []
        self._lock = threading.Lock()
        self._sleep = sleep

    def acquire(self, tokens: int) -> None:
        if self.tokens_per_minute <= 0:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                self._window = [(t, n) for t, n in self._window if now - t < 60.0]
                used = sum(n for _, n in self._window)
                if used + tokens <= self.tokens_per_minute or not self._window:
                    self._window.append((now, tokens))
                    return
                wait = 60.0 - (now - self._window[0][0])
            self._sleep(max(wait, 0.05))


class LlmGateway:
    """Thread-safe front door for all model calls.

    Bounds in-flight requests with a semaphore and, when `record_path` is
    set, appends every completed call to a JSON-lines transcript usable by
    `ReplayBackend`.
    """

    def __init__(
        self,
        backend,
        max_concurrency: int = 4,
        record_path: Path | None = None,
        tokens_per_minute: int = 0,
    ):
        self.backend = backend
        self.record_path = Path(record_path) if record_path else None
        self._semaphore = threading.BoundedSemaphore(max_concurrency)
        self._write_lock = threading.Lock()
        self._budget = _TokenBudget(tokens_per_minute)
        if self.record_path:
            self.record_path.parent.mkdir(parents=True, exist_ok=True)

    def complete(self, request: ChatRequest) -> ChatResponse:
        prompt_tokens = sum(estimate_tokens(c) for _, c in request.messages)
        with self._semaphore:
            self._budget.acquire(prompt_tokens + request.max_output_tokens)
            response = self.backend.complete(request)
        if self.record_path:
            self._record(request, response)
        return response

    def _record(self, request: ChatRequest, response: ChatResponse) -> None:
        entry = {
            "digest": request_digest(request),
            "request": request.to_json_dict(),
            "response": response.to_json_dict(),
        }
        line = json.dumps(entry, ensure_ascii=False, separators=(",", ":")) + "\n"
        with self._write_lock:
            with open(self.record_path, "a", encoding="utf-8") as fh:
                fh.write(line)


def replay_gateway(transcript_path: Path) -> LlmGateway:
    return LlmGateway(ReplayBackend(transcript_path), max_concurrency=4)


# --------------------------------------------------------------------------
# fine-tune file export
# --------------------------------------------------------------------------


def finetune_record(request: ChatRequest, label: bool) -> dict:
    """Chat-format training record: the inference prompt plus the gold
    assistant turn ("1" aligned, "0" otherwise)."""
    messages = [{"role": r, "content": c} for r, c in request.messages]
    messages.append({"role": "assistant", "content": "1" if label else "0"})
    return {"messages": messages}


def export_finetune_file(instances: Sequence, prompt_builder, path: Path) -> int:
    """Write one FineTuneRecord per labeled instance.

    `prompt_builder` must be the same callable used at inference time so the
    serialized prompt cannot drift from the classification prompt.
    Returns the record count (== len(instances)).
    """
    instances = list(instances)
    if not instances:
        raise EmptySplit("cannot export a fine-tune file from an empty split")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            record = finetune_record(prompt_builder(inst), inst.label)
            fh.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
            count += 1
    return count

"""Provider-agnostic multimodal chat client with retry, caching and policy.

A provider turns one ChatRequest into reply text. The client wraps a
provider with bounded concurrency, exponential-backoff retry on transient
failures, a file cache keyed by the full request content, and the
temperature policy for critic-prediction call sites.
"""

from __future__ import annotations

import base64
import json
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .errors import (
    PolicyError,
    ProviderError,
    RetryExhaustedError,
    TransientProviderError,
)
from .util import canonical_json, parallel_map, sha256_hex

# call sites predicting critiques must run at temperature 0
ZERO_TEMPERATURE_PURPOSES = frozenset({"critique_predict"})

DEFAULT_MAX_ATTEMPTS = 5
DEFAULT_BASE_DELAY = 1.0
DEFAULT_BACKOFF_FACTOR = 2.0
DEFAULT_JITTER = 0.2
DEFAULT_MAX_IN_FLIGHT = 8


@dataclass(frozen=True)
class ChatRequest:
    model: str
    text: str
    temperature: float = 0.0
    images: tuple[bytes, ...] = ()
    purpose: str = ""  # call-site tag: mock dispatch, policy, logs

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ProviderError(f"temperature {self.temperature} outside [0, 2]")


@dataclass
class ChatResponse:
    text: str
    usage: dict
    cached: bool = False
    attempts: int = 1


@dataclass
class ProviderReply:
    text: str
    usage: dict = field(default_factory=dict)


class Provider(Protocol):
    def complete(self, request: ChatRequest) -> ProviderReply: ...


class MockProvider:
    """Deterministic provider for tests and --mock runs.

    Scripts map a request purpose to a reply or a list of replies consumed
    in order; when a list runs out the last reply repeats. A script value
    may also be a callable taking the request.
    """

    def __init__(self, scripts: dict | None = None, default_reply: str = "OK"):
        self._scripts = {}
        for purpose, replies in (scripts or {}).items():
            if isinstance(replies, (list, tuple)):
                self._scripts[purpose] = list(replies)
            else:
                self._scripts[purpose] = [replies]
        self._default = default_reply
        self._lock = threading.Lock()
        self.calls: list[ChatRequest] = []

    def has_script(self, purpose: str) -> bool:
        return purpose in self._scripts

    def complete(self, request: ChatRequest) -> ProviderReply:
        with self._lock:
            self.calls.append(request)
            replies = self._scripts.get(request.purpose)
            if replies is None:
                reply = self._default
            else:
                reply = replies.pop(0) if len(replies) > 1 else replies[0]
        if callable(reply):
            reply = reply(request)
        usage = {
            "prompt_tokens": len(request.text) // 4,
            "completion_tokens": len(reply) // 4,
        }
        return ProviderReply(reply, usage)

    def call_count(self, purpose: str | None = None) -> int:
        if purpose is None:
            return len(self.calls)
        return sum(1 for c in self.calls if c.purpose == purpose)


class HttpProvider:
    """OpenAI-style chat-completions endpoint over HTTP."""

    def __init__(self, base_url: str, api_key: str = "", timeout: float = 120.0,
                 transport=None):
        import httpx

        self._client = httpx.Client(
            base_url=base_url.rstrip("/"),
            headers={"Authorization": f"Bearer {api_key}"} if api_key else {},
            timeout=timeout,
            transport=transport,
        )

    def complete(self, request: ChatRequest) -> ProviderReply:
        import httpx

        content: list | str
        if request.images:
            content = [{"type": "text", "text": request.text}]
            for image in request.images:
                encoded = base64.b64encode(image).decode("ascii")
                content.append({
                    "type": "image_url",
                    "image_url": {"url": f"data:image/png;base64,{encoded}"},
                })
        else:
            content = request.text
        payload = {
            "model": request.model,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": content}],
        }
        try:
            response = self._client.post("/chat/completions", json=payload)
        except httpx.HTTPError as exc:
            raise TransientProviderError(f"transport failure: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientProviderError(f"status {response.status_code}")
        if response.status_code >= 400:
            raise ProviderError(f"status {response.status_code}: {response.text[:200]}")
        body = response.json()
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed completion body: {exc}") from exc
        return ProviderReply(text, body.get("usage", {}))


def request_cache_key(request: ChatRequest) -> str:
    return sha256_hex(canonical_json({
        "model": request.model,
        "temperature": request.temperature,
        "text": request.text,
        "images": [sha256_hex(image) for image in request.images],
    }).encode("utf-8"))


class ChatClient:
    def __init__(
        self,
        provider: Provider,
        cache_dir: str | Path | None = None,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        base_delay: float = DEFAULT_BASE_DELAY,
        backoff_factor: float = DEFAULT_BACKOFF_FACTOR,
        jitter: float = DEFAULT_JITTER,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        sleeper=time.sleep,
        rng: random.Random | None = None,
        zero_temperature_purposes: frozenset = ZERO_TEMPERATURE_PURPOSES,
    ):
        self._provider = provider
        self._cache_dir = Path(cache_dir) if cache_dir else None
        self._max_attempts = max_attempts
        self._base_delay = base_delay
        self._backoff_factor = backoff_factor
        self._jitter = jitter
        self._sleeper = sleeper
        self._rng = rng or random.Random()
        self._gate = threading.Semaphore(max_in_flight)
        self._zero_temp = zero_temperature_purposes

    def chat(self, request: ChatRequest) -> ChatResponse:
        if request.purpose in self._zero_temp and request.temperature != 0.0:
            raise PolicyError(
                f"purpose {request.purpose!r} requires temperature 0, "
                f"got {request.temperature}"
            )
        cache_path = self._cache_path(request)
        if cache_path is not None and cache_path.exists():
            entry = json.loads(cache_path.read_text("utf-8"))
            return ChatResponse(entry["text"], entry["usage"], cached=True, attempts=0)
        reply, attempts = self._complete_with_retry(request)
        if cache_path is not None:
            cache_path.parent.mkdir(parents=True, exist_ok=True)
            tmp = cache_path.with_suffix(".tmp")
            tmp.write_text(canonical_json({"text": reply.text, "usage": reply.usage}), "utf-8")
            tmp.replace(cache_path)
        return ChatResponse(reply.text, reply.usage, cached=False, attempts=attempts)

    def chat_many(self, requests, max_workers: int = DEFAULT_MAX_IN_FLIGHT):
        """Run chat over many requests; returns (request, response, error) triples."""
        return parallel_map(self.chat, list(requests), max_workers=max_workers)

    def _cache_path(self, request: ChatRequest) -> Path | None:
        if self._cache_dir is None:
            return None
        key = request_cache_key(request)
        return self._cache_dir / key[:2] / f"{key}.json"

    def _complete_with_retry(self, request: ChatRequest):
        last: Exception | None = None
        for attempt in range(1, self._max_attempts + 1):
            try:
                with self._gate:
                    return self._provider.complete(request), attempt
            except TransientProviderError as exc:
                last = exc
                if attempt == self._max_attempts:
                    break
                delay = self._base_delay * self._backoff_factor ** (attempt - 1)
                if self._jitter:
                    delay *= 1.0 + self._jitter * self._rng.uniform(-1.0, 1.0)
                self._sleeper(delay)
        raise RetryExhaustedError(self._max_attempts, last)

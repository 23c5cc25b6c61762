"""Client for OpenAI-compatible endpoints plus a deterministic mock backend.

All network concerns live here: retry, rate limiting, response caching, and
the legacy echo-scoring call used to compute perplexity of a fixed
continuation. Mock backends are registered under ``mock://<name>`` URLs and
speak the same wire format as a real endpoint, so every other module is
exercised byte-for-byte identically with or without a live server.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import requests

from .errors import ApiError, CapabilityError, ConfigError, TransportError, ValidationError
from .store import CacheEntry, request_digest

CHAT_PATH = "/v1/chat/completions"
COMPLETIONS_PATH = "/v1/completions"
MOCK_SCHEME = "mock://"

# Statuses worth retrying; everything else non-2xx fails immediately.
RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: tuple[float, ...] = (0.05, 0.2, 0.8)

    def delay(self, attempt: int) -> float:
        if not self.backoff:
            return 0.0
        return self.backoff[min(attempt, len(self.backoff) - 1)]


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    temperature: float = 0.0
    max_tokens: int = 1024
    want_logprobs: bool = False
    max_in_flight: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    auth_token_env: str | None = None
    timeout: float = 120.0

    def __post_init__(self):
        if self.temperature != 0:
            raise ConfigError(
                f"endpoint {self.model_name!r}: temperature must be 0 for deterministic "
                f"decoding, got {self.temperature}"
            )
        if self.max_in_flight < 1:
            raise ConfigError(f"endpoint {self.model_name!r}: max_in_flight must be >= 1")

    @property
    def fingerprint(self) -> str:
        ident = json.dumps(
            {
                "base_url": self.base_url,
                "model_name": self.model_name,
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
            },
            sort_keys=True,
        )
        return hashlib.sha256(ident.encode("utf-8")).hexdigest()[:16]

    def is_mock(self) -> bool:
        return self.base_url.startswith(MOCK_SCHEME)


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    completion_tokens: int

    def to_json_dict(self) -> dict:
        return {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens}


@dataclass(frozen=True)
class Completion:
    text: str
    token_logprobs: tuple[tuple[str, float], ...] | None
    usage: Usage
    endpoint_fingerprint: str

    def __post_init__(self):
        if self.token_logprobs is not None:
            for tok, lp in self.token_logprobs:
                if lp > 0:
                    raise ValidationError(f"logprob for token {tok!r} is positive: {lp}")
            if self.usage.completion_tokens != len(self.token_logprobs):
                raise ValidationError(
                    "completion_tokens disagrees with returned logprob count: "
                    f"{self.usage.completion_tokens} vs {len(self.token_logprobs)}"
                )

    def to_json_dict(self) -> dict:
        return {
            "text": self.text,
            "token_logprobs": [list(t) for t in self.token_logprobs]
            if self.token_logprobs is not None
            else None,
            "usage": self.usage.to_json_dict(),
            "endpoint_fingerprint": self.endpoint_fingerprint,
        }


class TokenCount(int):
    """Integer token count that remembers how it was obtained."""

    method: str

    def __new__(cls, value: int, method: str):
        obj = super().__new__(cls, value)
        obj.method = method
        return obj


def perplexity_from_logprobs(logprobs: Sequence[float]) -> float:
    """exp of the mean negative log-likelihood over the given tokens."""
    if not logprobs:
        raise ValidationError("cannot compute perplexity over zero tokens")
    return math.exp(-sum(logprobs) / len(logprobs))


# --- mock backends -----------------------------------------------------------

_TOKEN_RE = re.compile(r"\S+\s*")


def mock_tokenize(text: str) -> list[tuple[str, int]]:
    """Whitespace-run tokens with character offsets (trailing space attached)."""
    return [(m.group(0), m.start()) for m in _TOKEN_RE.finditer(text)]


def _default_logprob(token: str, index: int, text: str) -> float:
    h = int(hashlib.sha256(token.encode("utf-8")).hexdigest()[:8], 16)
    return -(0.5 + (h % 2500) / 1000.0)


class MockBackend:
    """Scriptable wire-level stand-in for an OpenAI-compatible server.

    Chat prompts are matched against exact-prompt scripts, then substring
    rules in registration order, then a default responder. Echo-mode
    completions tokenize the prompt and assign each token a deterministic
    logprob, overridable per test.
    """

    def __init__(self, model_name: str = "mock-model"):
        self.model_name = model_name
        self.calls: list[tuple[str, dict]] = []
        self._lock = threading.Lock()
        self._exact: dict[str, Callable[[str], str]] = {}
        self._rules: list[tuple[str, Callable[[str], str]]] = []
        self._default: Callable[[str], str] | None = None
        self._echo_fn: Callable[[str, int, str], float] = _default_logprob
        self._echo_scripts: dict[str, list[float]] = {}
        self._failures: deque = deque()

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def script(self, prompt: str, text: str | Callable[[str], str]) -> "MockBackend":
        self._exact[prompt] = text if callable(text) else (lambda _p, _t=text: _t)
        return self

    def script_contains(self, substring: str, text: str | Callable[[str], str]) -> "MockBackend":
        self._rules.append((substring, text if callable(text) else (lambda _p, _t=text: _t)))
        return self

    def script_default(self, text: str | Callable[[str], str]) -> "MockBackend":
        self._default = text if callable(text) else (lambda _p, _t=text: _t)
        return self

    def set_echo_logprob_fn(self, fn: Callable[[str, int, str], float]) -> "MockBackend":
        self._echo_fn = fn
        return self

    def script_echo(self, full_text: str, logprobs: list[float]) -> "MockBackend":
        """Pin the exact logprob vector returned when echo-scoring full_text."""
        self._echo_scripts[full_text] = list(logprobs)
        return self

    def fail_next(self, *, status: int | None = None, transport: bool = False,
                  times: int = 1) -> "MockBackend":
        for _ in range(times):
            self._failures.append(("transport", None) if transport else ("status", status))
        return self

    def handle(self, path: str, body: dict) -> tuple[int, dict]:
        with self._lock:
            self.calls.append((path, body))
            if self._failures:
                kind, status = self._failures.popleft()
                if kind == "transport":
                    raise TransportError("mock: injected connection failure")
                return status, {"error": {"message": "mock: injected failure"}}
            if path == CHAT_PATH:
                return self._handle_chat(body)
            if path == COMPLETIONS_PATH:
                return self._handle_completions(body)
            return 404, {"error": {"message": f"mock: no route {path}"}}

    def _respond(self, prompt: str) -> str | None:
        if prompt in self._exact:
            return self._exact[prompt](prompt)
        for substring, fn in self._rules:
            if substring in prompt:
                return fn(prompt)
        if self._default is not None:
            return self._default(prompt)
        return None

    def _handle_chat(self, body: dict) -> tuple[int, dict]:
        prompt = body["messages"][-1]["content"]
        text = self._respond(prompt)
        if text is None:
            return 400, {"error": {"message": "mock: no script matches prompt"}}
        blob_id = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]
        n_prompt = len(mock_tokenize(prompt))
        n_completion = len(mock_tokenize(text))
        choice: dict[str, Any] = {
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": "stop",
        }
        if body.get("logprobs"):
            choice["logprobs"] = {
                "content": [
                    {"token": tok, "logprob": self._echo_fn(tok, i, text)}
                    for i, (tok, _off) in enumerate(mock_tokenize(text))
                ]
            }
        return 200, {
            "id": f"mock-chat-{blob_id}",
            "object": "chat.completion",
            "model": self.model_name,
            "choices": [choice],
            "usage": {
                "prompt_tokens": n_prompt,
                "completion_tokens": n_completion,
                "total_tokens": n_prompt + n_completion,
            },
        }

    def _handle_completions(self, body: dict) -> tuple[int, dict]:
        if not body.get("echo") or body.get("max_tokens", 0) != 0:
            return 400, {"error": {"message": "mock: only echo-scoring is supported"}}
        full = body["prompt"]
        toks = mock_tokenize(full)
        scripted = self._echo_scripts.get(full)
        if scripted is not None:
            logprobs: list[float | None] = list(scripted)
            if len(logprobs) < len(toks):
                logprobs = [None] * (len(toks) - len(logprobs)) + logprobs
        else:
            logprobs = [self._echo_fn(tok, i, full) for i, (tok, _off) in enumerate(toks)]
            if toks:
                logprobs[0] = None  # first token has no conditioning context
        blob_id = hashlib.sha256(full.encode("utf-8")).hexdigest()[:12]
        return 200, {
            "id": f"mock-cmpl-{blob_id}",
            "object": "text_completion",
            "model": self.model_name,
            "choices": [
                {
                    "index": 0,
                    "text": full,
                    "finish_reason": "stop",
                    "logprobs": {
                        "tokens": [t for t, _o in toks],
                        "token_logprobs": logprobs,
                        "text_offset": [o for _t, o in toks],
                    },
                }
            ],
            "usage": {
                "prompt_tokens": len(toks),
                "completion_tokens": 0,
                "total_tokens": len(toks),
            },
        }


def load_scripted_mock(path) -> MockBackend:
    """Build a MockBackend from a JSON script file.

    Supported chat modes: "hash_answer" (deterministic Yes/No from a prompt
    digest, wrapped in a short reasoning text) and "rules" (substring match
    with a default). A "rewrite" section makes the mock echo the reference
    block of rewrite prompts, optionally flipping the answer on a digest
    modulus to exercise the fallback path. The "echo" section can bias
    logprobs for texts carrying the rewrite prefix so rewritten traces score
    a lower perplexity.
    """
    import pathlib

    spec = json.loads(pathlib.Path(path).read_text("utf-8"))
    backend = MockBackend(model_name=spec.get("model_name", "scripted"))
    chat = spec.get("chat", {"mode": "hash_answer"})
    rewrite = spec.get("rewrite")
    echo = spec.get("echo")

    def hash_answer(prompt: str) -> str:
        h = int(hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:8], 16)
        verdict = "Yes" if h % 2 == 0 else "No"
        preface = chat.get("preface", "Weighing the reported order of events and"
                                      " whether one plausibly brings about the other")
        return (f"{preface}, the passage gives signal {h % 997} for this pair. "
                f"[Final Answer: {verdict}]")

    def respond(prompt: str) -> str:
        if rewrite is not None and "### Response:" in prompt:
            head, _sep, _tail = prompt.rpartition("\n\n### Response:")
            _pre, _sep2, reference = head.partition("### Reference:\n")
            text = reference if _sep2 else prompt
            flip_mod = rewrite.get("flip_mod", 0)
            if flip_mod:
                h = int(hashlib.sha256(reference.encode("utf-8")).hexdigest()[:8], 16)
                if h % flip_mod == 0:
                    text = _flip_final_answer(text)
            return rewrite.get("prefix", "") + text
        if chat.get("mode") == "rules":
            for rule in chat.get("rules", []):
                if rule["contains"] in prompt:
                    return rule["text"]
            if "default" in chat:
                return chat["default"]
            return hash_answer(prompt)
        return hash_answer(prompt)

    backend.script_default(respond)
    if echo:
        marker = echo.get("style_bonus_contains", "")
        bonus = float(echo.get("bonus", 0.9))

        def biased(token: str, index: int, text: str) -> float:
            base = _default_logprob(token, index, text)
            return base * bonus if marker and marker in text else base

        backend.set_echo_logprob_fn(biased)
    return backend


_FLIP_RE = re.compile(r"\[\s*final\s+answer\s*:\s*(yes|no)\s*\]", re.IGNORECASE)


def _flip_final_answer(text: str) -> str:
    matches = list(_FLIP_RE.finditer(text))
    if not matches:
        return text
    m = matches[-1]
    flipped = "[Final Answer: No]" if m.group(1).lower() == "yes" else "[Final Answer: Yes]"
    return text[:m.start()] + flipped + text[m.end():]


_MOCK_REGISTRY: dict[str, MockBackend] = {}


def register_mock(name: str, backend: MockBackend) -> MockBackend:
    _MOCK_REGISTRY[name] = backend
    return backend


def unregister_mock(name: str) -> None:
    _MOCK_REGISTRY.pop(name, None)


def clear_mocks() -> None:
    _MOCK_REGISTRY.clear()


def resolve_mock(base_url: str) -> MockBackend:
    name = base_url[len(MOCK_SCHEME):].strip("/")
    if name not in _MOCK_REGISTRY:
        raise ConfigError(f"no mock backend registered under {base_url!r}")
    return _MOCK_REGISTRY[name]


# --- the gateway -------------------------------------------------------------

class Gateway:
    """Shared client. Thread-safe; enforces a per-endpoint in-flight bound."""

    def __init__(self, cache=None, sleep: Callable[[float], None] = time.sleep,
                 session: requests.Session | None = None):
        self.cache = cache
        self._sleep = sleep
        self._session = session
        self._limits: dict[tuple[str, int], threading.BoundedSemaphore] = {}
        self._limits_lock = threading.Lock()

    # -- public operations

    def complete(self, config: EndpointConfig, prompt: str) -> Completion:
        body: dict[str, Any] = {
            "model": config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        }
        if config.want_logprobs:
            body["logprobs"] = True
        blob = self._request(config, CHAT_PATH, body)
        choice = blob["choices"][0]
        text = choice["message"]["content"]
        logprobs = None
        lp_blob = choice.get("logprobs")
        if lp_blob and lp_blob.get("content"):
            logprobs = tuple((e["token"], e["logprob"]) for e in lp_blob["content"])
        usage_blob = blob.get("usage") or {}
        usage = Usage(
            prompt_tokens=usage_blob.get("prompt_tokens", 0),
            completion_tokens=usage_blob.get(
                "completion_tokens", len(logprobs) if logprobs else 0
            ),
        )
        return Completion(
            text=text,
            token_logprobs=logprobs,
            usage=usage,
            endpoint_fingerprint=config.fingerprint,
        )

    def complete_all(self, config: EndpointConfig, prompts: Sequence[str]) -> list[Completion]:
        """Fan out over prompts; results come back in input order."""
        if not prompts:
            return []
        if config.max_in_flight == 1 or len(prompts) == 1:
            return [self.complete(config, p) for p in prompts]
        with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
            return list(pool.map(lambda p: self.complete(config, p), prompts))

    def score_perplexity(self, config: EndpointConfig, prompt: str, response: str) -> float:
        if not response:
            raise ValidationError("cannot score an empty response")
        logprobs = self._echo_logprobs(config, prompt, response)
        if not logprobs:
            raise ValidationError(
                "no response tokens fell past the prompt boundary; cannot score"
            )
        return perplexity_from_logprobs(logprobs)

    def count_tokens(self, config: EndpointConfig, text: str) -> TokenCount:
        if not text:
            return TokenCount(0, "whitespace")
        try:
            blob = self._echo_blob(config, text)
        except (CapabilityError, ApiError, TransportError):
            return TokenCount(len(text.split()), "whitespace")
        lp = blob["choices"][0].get("logprobs") or {}
        tokens = lp.get("tokens")
        if tokens is not None:
            return TokenCount(len(tokens), "endpoint")
        usage = blob.get("usage") or {}
        if "prompt_tokens" in usage:
            return TokenCount(usage["prompt_tokens"], "endpoint")
        return TokenCount(len(text.split()), "whitespace")

    # -- internals

    def _echo_blob(self, config: EndpointConfig, full_text: str) -> dict:
        body = {
            "model": config.model_name,
            "prompt": full_text,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
        }
        return self._request(config, COMPLETIONS_PATH, body, echo_capability=True)

    def _echo_logprobs(self, config: EndpointConfig, prompt: str, response: str) -> list[float]:
        blob = self._echo_blob(config, prompt + response)
        lp = blob["choices"][0].get("logprobs")
        if not lp or "token_logprobs" not in lp or "text_offset" not in lp:
            raise CapabilityError(
                f"endpoint {config.base_url} returned no echo logprobs; "
                "a legacy completions endpoint with echo support is required"
            )
        boundary = len(prompt)
        return [
            logprob
            for logprob, offset in zip(lp["token_logprobs"], lp["text_offset"])
            if offset >= boundary and logprob is not None
        ]

    def _limit(self, config: EndpointConfig) -> threading.BoundedSemaphore:
        key = (config.fingerprint, config.max_in_flight)
        with self._limits_lock:
            if key not in self._limits:
                self._limits[key] = threading.BoundedSemaphore(config.max_in_flight)
            return self._limits[key]

    def _request(self, config: EndpointConfig, path: str, body: dict,
                 echo_capability: bool = False) -> dict:
        digest = request_digest(config.fingerprint, {"path": path, "body": body})
        if self.cache is not None:
            hit = self.cache.get(digest)
            if hit is not None:
                return hit
        blob = self._request_uncached(config, path, body, echo_capability)
        if self.cache is not None:
            self.cache.put(CacheEntry(request_digest=digest, blob=blob,
                                      endpoint_fingerprint=config.fingerprint))
        return blob

    def _request_uncached(self, config: EndpointConfig, path: str, body: dict,
                          echo_capability: bool) -> dict:
        policy = config.retry
        backend = resolve_mock(config.base_url) if config.is_mock() else None
        last_exc: Exception | None = None
        status, blob = 0, {}
        with self._limit(config):
            for attempt in range(policy.max_attempts):
                try:
                    if backend is not None:
                        status, blob = backend.handle(path, body)
                    else:
                        status, blob = self._http(config, path, body)
                except TransportError as exc:
                    last_exc = exc
                    if attempt + 1 < policy.max_attempts:
                        self._sleep(policy.delay(attempt))
                        continue
                    raise TransportError(
                        f"{config.base_url}{path}: {exc} (after {policy.max_attempts} attempts)"
                    ) from exc
                if 200 <= status < 300:
                    return blob
                if status in RETRYABLE_STATUSES and attempt + 1 < policy.max_attempts:
                    self._sleep(policy.delay(attempt))
                    continue
                break
        if last_exc is not None and status == 0:
            raise TransportError(str(last_exc))
        if echo_capability and status in (400, 404, 501):
            raise CapabilityError(
                f"{config.base_url} does not support echo-scoring "
                f"(status {status}): {_short(blob)}"
            )
        raise ApiError(status, _short(blob))

    def _http(self, config: EndpointConfig, path: str, body: dict) -> tuple[int, dict]:
        url = config.base_url.rstrip("/") + path
        headers = {"Content-Type": "application/json"}
        if config.auth_token_env:
            token = os.environ.get(config.auth_token_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        if self._session is None:
            self._session = requests.Session()
        try:
            resp = self._session.post(url, json=body, headers=headers, timeout=config.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"{url}: {exc}") from exc
        try:
            payload = resp.json()
        except ValueError:
            payload = {"error": {"message": resp.text[:2000]}}
        return resp.status_code, payload


def _short(blob: dict) -> str:
    text = json.dumps(blob, ensure_ascii=False)
    return text if len(text) <= 500 else text[:500] + "..."

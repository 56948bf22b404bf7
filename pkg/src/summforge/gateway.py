"""OpenAI-compatible chat-completions client with retries and a mock transport.

One Gateway serves one logical endpoint with a bounded number of in-flight
requests. Request bodies serialize with a fixed key order so identical
requests are byte-identical, which the mock transport and the audit log
both key on. Transient failures (timeouts, connection errors, 429, 5xx)
retry with capped exponential backoff plus jitter; other 4xx statuses and
malformed response bodies never retry.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Protocol

import requests


class GatewayError(Exception):
    """Base class for transport and protocol failures."""


class TransportTimeout(GatewayError):
    pass


class TransportConnectionError(GatewayError):
    pass


class HttpStatusError(GatewayError):
    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


class ResponseParseError(GatewayError):
    """Malformed response body; never retried."""


class RetriesExhaustedError(GatewayError):
    def __init__(self, attempts: int, last: Exception):
        super().__init__(f"gave up after {attempts} attempts: {last}")
        self.attempts = attempts
        self.last = last


class RetryClass(Enum):
    TIMEOUT = "timeout"
    CONNECTION = "connection"
    RATE_LIMIT = "rate_limit"
    SERVER = "server"


class FinishReason(Enum):
    STOP = "stop"
    LENGTH = "length"
    OTHER = "other"


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"invalid role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    endpoint: str
    model: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 256
    timeout: float = 60.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    completion_tokens: int


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: FinishReason
    usage: Usage | None = None


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_backoff: float = 0.5
    backoff_multiplier: float = 2.0
    max_backoff: float = 30.0
    jitter_fraction: float = 0.25
    retry_on: frozenset[RetryClass] = frozenset(RetryClass)

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.backoff_multiplier <= 1:
            raise ValueError("backoff_multiplier must be > 1")
        if not 0 <= self.jitter_fraction <= self.backoff_multiplier - 1:
            # Keeps the jittered backoff sequence non-decreasing.
            raise ValueError("jitter_fraction must be in [0, multiplier - 1]")

    def delay(self, attempt: int, rng: random.Random) -> float:
        """Backoff before retry number `attempt` (1-based)."""
        base = min(self.max_backoff, self.base_backoff * self.backoff_multiplier ** (attempt - 1))
        return min(self.max_backoff, base * (1.0 + self.jitter_fraction * rng.random()))


def serialize_request(req: ChatRequest) -> str:
    """Stable request-body serialization (fixed key order, compact)."""
    body = {
        "model": req.model,
        "messages": [{"role": m.role, "content": m.content} for m in req.messages],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }
    return json.dumps(body, ensure_ascii=False, separators=(",", ":"))


def request_hash(req: ChatRequest) -> str:
    return hashlib.sha256(serialize_request(req).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TransportReply:
    status: int
    body: str


class Transport(Protocol):
    def post(self, url: str, body: str, headers: dict[str, str], timeout: float) -> TransportReply:
        ...


class HttpTransport:
    def post(self, url: str, body: str, headers: dict[str, str], timeout: float) -> TransportReply:
        try:
            resp = requests.post(url, data=body.encode("utf-8"), headers=headers, timeout=timeout)
        except requests.Timeout as exc:
            raise TransportTimeout(str(exc)) from exc
        except requests.ConnectionError as exc:
            raise TransportConnectionError(str(exc)) from exc
        return TransportReply(status=resp.status_code, body=resp.text)


ScriptHandler = Callable[[dict], "TransportReply | str | Exception"]


class MockTransport:
    """In-process scriptable transport for deterministic, network-free runs.

    Responses can be scripted three ways, checked in order: an exact
    request-hash key, predicate rules, and a default handler. Scripted
    entries may be reply sequences (consumed one per call; the last entry
    repeats) whose items are TransportReply, plain content strings
    (wrapped into a 200 chat body), or exceptions to raise.
    """

    def __init__(self, default: ScriptHandler | None = None):
        self._by_hash: dict[str, list] = {}
        self._rules: list[tuple[Callable[[dict], bool], list]] = []
        self._default = default
        self.requests: list[dict] = []
        self._lock = threading.Lock()

    def script_hash(self, request_hash_hex: str, *replies) -> None:
        self._by_hash[request_hash_hex] = list(replies)

    def script_rule(self, predicate: Callable[[dict], bool], *replies) -> None:
        self._rules.append((predicate, list(replies)))

    @staticmethod
    def chat_body(content: str, finish_reason: str = "stop") -> str:
        return json.dumps(
            {"choices": [{"message": {"content": content}, "finish_reason": finish_reason}]},
            ensure_ascii=False,
        )

    def _resolve(self, payload: dict, body: str) -> "TransportReply | str | Exception":
        digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
        if digest in self._by_hash:
            seq = self._by_hash[digest]
            return seq.pop(0) if len(seq) > 1 else seq[0]
        for predicate, seq in self._rules:
            if predicate(payload):
                return seq.pop(0) if len(seq) > 1 else seq[0]
        if self._default is not None:
            return self._default(payload)
        raise AssertionError("MockTransport has no script for this request")

    def post(self, url: str, body: str, headers: dict[str, str], timeout: float) -> TransportReply:
        payload = json.loads(body)
        with self._lock:
            self.requests.append(payload)
            outcome = self._resolve(payload, body)
        if isinstance(outcome, Exception):
            raise outcome
        if isinstance(outcome, str):
            return TransportReply(status=200, body=self.chat_body(outcome))
        return outcome


def _parse_chat_body(body: str) -> ChatResponse:
    try:
        obj = json.loads(body)
        choice = obj["choices"][0]
        content = choice["message"]["content"]
        if not isinstance(content, str):
            raise TypeError("content is not a string")
        finish_raw = choice.get("finish_reason", "other")
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise ResponseParseError(f"malformed chat completion body: {exc}") from exc
    finish = {
        "stop": FinishReason.STOP,
        "length": FinishReason.LENGTH,
    }.get(finish_raw, FinishReason.OTHER)
    usage = None
    raw_usage = obj.get("usage")
    if isinstance(raw_usage, dict):
        try:
            usage = Usage(
                prompt_tokens=int(raw_usage.get("prompt_tokens", 0)),
                completion_tokens=int(raw_usage.get("completion_tokens", 0)),
            )
        except (TypeError, ValueError):
            usage = None
    return ChatResponse(content=content, finish_reason=finish, usage=usage)


class Gateway:
    """Retry-aware chat-completions client bound to a transport.

    Safe for concurrent use; at most `concurrency` requests are in flight
    per endpoint. Completion order is whatever the transport delivers.
    """

    def __init__(
        self,
        transport: Transport,
        *,
        policy: RetryPolicy | None = None,
        auth_env: str | None = None,
        concurrency: int | None = None,
        audit_path: str | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self._transport = transport
        self._policy = policy or RetryPolicy()
        self._auth_env = auth_env
        self._concurrency = concurrency
        self._semaphores: dict[str, threading.Semaphore] = {}
        self._sem_lock = threading.Lock()
        self._audit_path = audit_path
        self._audit_lock = threading.Lock()
        self._sleep = sleep
        self._rng = rng or random.Random()

    def _semaphore(self, endpoint: str) -> threading.Semaphore | None:
        if not self._concurrency:
            return None
        with self._sem_lock:
            if endpoint not in self._semaphores:
                self._semaphores[endpoint] = threading.Semaphore(self._concurrency)
            return self._semaphores[endpoint]

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._auth_env:
            token = os.environ.get(self._auth_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _audit(self, req_hash: str, body: str, status: int, response_body: str) -> None:
        if not self._audit_path:
            return
        entry = {"request_hash": req_hash, "request": json.loads(body), "status": status,
                 "response": response_body}
        with self._audit_lock:
            with open(self._audit_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def chat_complete(self, req: ChatRequest, policy: RetryPolicy | None = None) -> ChatResponse:
        policy = policy or self._policy
        body = serialize_request(req)
        req_hash = request_hash(req)
        url = req.endpoint.rstrip("/") + "/chat/completions"
        sem = self._semaphore(req.endpoint)
        for attempt in range(1, policy.max_attempts + 1):
            if sem is not None:
                sem.acquire()
            try:
                reply = self._transport.post(url, body, self._headers(), req.timeout)
            except TransportTimeout as exc:
                last: Exception = exc
                retry_class = RetryClass.TIMEOUT
            except TransportConnectionError as exc:
                last = exc
                retry_class = RetryClass.CONNECTION
            else:
                self._audit(req_hash, body, reply.status, reply.body)
                if reply.status == 200:
                    return _parse_chat_body(reply.body)
                if reply.status == 429:
                    last = HttpStatusError(reply.status, reply.body)
                    retry_class = RetryClass.RATE_LIMIT
                elif 500 <= reply.status < 600:
                    last = HttpStatusError(reply.status, reply.body)
                    retry_class = RetryClass.SERVER
                else:
                    raise HttpStatusError(reply.status, reply.body)
            finally:
                if sem is not None:
                    sem.release()
            if retry_class not in policy.retry_on:
                raise last
            if attempt == policy.max_attempts:
                raise RetriesExhaustedError(attempts=attempt, last=last) from last
            self._sleep(policy.delay(attempt, self._rng))
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class GenerationProfile:
    """Decoding settings for one model role; greedy by default."""

    temperature: float = 0.0
    max_tokens: int = 256
    timeout: float = 60.0


GREEDY_CANDIDATE_PROFILE = GenerationProfile(temperature=0.0, max_tokens=256)
# Teacher-side synthesis keeps the greedy profile but allows longer outputs.
TEACHER_PROFILE = GenerationProfile(temperature=0.0, max_tokens=512)


@dataclass(frozen=True)
class CompletionResult:
    text: str
    model: str
    finish_reason: FinishReason
    profile: GenerationProfile
    warnings: tuple[str, ...] = ()


class ModelClient:
    """One served model: endpoint, model name, and decoding profile."""

    def __init__(self, gateway: Gateway, endpoint: str, model: str,
                 profile: GenerationProfile = GREEDY_CANDIDATE_PROFILE):
        self.gateway = gateway
        self.endpoint = endpoint
        self.model = model
        self.profile = profile

    def complete(self, user: str, system: str | None = None) -> CompletionResult:
        """Run one completion; annotates (never fails on) truncated or
        empty outputs."""
        messages = []
        if system is not None:
            messages.append(Message(role="system", content=system))
        messages.append(Message(role="user", content=user))
        req = ChatRequest(
            endpoint=self.endpoint,
            model=self.model,
            messages=tuple(messages),
            temperature=self.profile.temperature,
            max_tokens=self.profile.max_tokens,
            timeout=self.profile.timeout,
        )
        resp = self.gateway.chat_complete(req)
        warnings = []
        if resp.finish_reason is FinishReason.LENGTH:
            warnings.append("completion hit the max_tokens cap")
        if not resp.content and resp.finish_reason is not FinishReason.OTHER:
            warnings.append("empty completion")
        return CompletionResult(
            text=resp.content,
            model=self.model,
            finish_reason=resp.finish_reason,
            profile=self.profile,
            warnings=tuple(warnings),
        )


def summarize(client: ModelClient, transcript_user_message: str, sys: str) -> CompletionResult:
    """Teacher/candidate summary call; the user message must already be
    budget-safe (built by the context module)."""
    return client.complete(transcript_user_message, system=sys)

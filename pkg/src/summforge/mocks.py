"""Deterministic in-process mock models for network-free pipeline runs.

The deterministic transport answers any chat request with content derived
solely from a hash of the request, so a full pipeline run (teacher
synthesis, candidate generation, judging) is reproducible byte for byte.
Request kinds are recognized from the judge prompts themselves: key-fact
extraction, fact alignment, rubric grading, and plain summarization.

Endpoint URLs of the form "mock:<name>" select this transport in the CLI
configuration.
"""

from __future__ import annotations

import hashlib
import json
import re

from .gateway import (
    Gateway,
    GenerationProfile,
    ModelClient,
    MockTransport,
    RetryPolicy,
    TransportReply,
)

_PAYLOAD_RE = re.compile(r"\{\s*\"summary_sentences\"")


def _digest(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


def _mock_summary(user: str) -> str:
    h = _digest(user)
    tag = h[:4].hex()
    days = 1 + h[4] % 9
    return (
        f"Mock summary {tag} of the conversation between speaker 0 and speaker 1. "
        f"The callers worked through the request step by step and settled it. "
        f"A follow-up is planned in {days} days."
    )


def _mock_key_facts(user: str) -> str:
    h = _digest(user)
    n = 3 + h[0] % 4
    facts = [
        f"Mock key fact {i + 1} ({h[i + 1]:02x}) was agreed on the call."
        for i in range(n)
    ]
    return json.dumps({"key_facts": facts})


def _mock_alignment(user: str) -> str:
    m = _PAYLOAD_RE.search(user)
    if m is None:
        return json.dumps({"error": "no payload found"})
    payload, _ = json.JSONDecoder().raw_decode(user[m.start():])
    sentences = payload.get("summary_sentences", [])
    facts = payload.get("key_facts", [])
    h = _digest(user)

    def labels(count: int, salt: int) -> list[bool]:
        # Mostly true, deterministically sprinkled falses.
        return [(h[(salt + i) % len(h)] & 7) != 0 for i in range(count)]

    return json.dumps(
        {
            "sentence_factual": labels(len(sentences), 3),
            "fact_covered": labels(len(facts), 11),
            "sentence_has_keyfact": labels(len(sentences), 19),
        }
    )


def _mock_rubric_grade(user: str) -> str:
    h = _digest(user)
    score = 1 + h[7] % 5
    return (
        f"The response covers the call at a level matching the rubric "
        f"description ({h[:3].hex()}). [RESULT] {score}"
    )


def deterministic_reply(payload: dict) -> str:
    """Route one chat request to the matching deterministic behavior."""
    user = ""
    for message in payload.get("messages", []):
        if message.get("role") == "user":
            user = message.get("content", "")
    if _PAYLOAD_RE.search(user):
        return _mock_alignment(user)
    if '"key_facts"' in user:
        return _mock_key_facts(user)
    if "[RESULT]" in user:
        return _mock_rubric_grade(user)
    return _mock_summary(user)


def deterministic_transport() -> MockTransport:
    return MockTransport(default=deterministic_reply)


def make_client(
    transport: MockTransport,
    *,
    endpoint: str = "mock:model",
    model: str = "mock-model",
    profile: GenerationProfile = GenerationProfile(),
    policy: RetryPolicy | None = None,
) -> ModelClient:
    """ModelClient over an in-process transport; retry sleeps are no-ops."""
    gateway = Gateway(transport, policy=policy, sleep=lambda _s: None)
    return ModelClient(gateway, endpoint=endpoint, model=model, profile=profile)


def deterministic_client(
    *, endpoint: str = "mock:model", model: str = "mock-model",
    profile: GenerationProfile = GenerationProfile(),
) -> ModelClient:
    return make_client(deterministic_transport(), endpoint=endpoint, model=model, profile=profile)


def scripted_client(*replies, model: str = "scripted-model",
                    policy: RetryPolicy | None = None) -> tuple[ModelClient, MockTransport]:
    """Client whose transport answers every request from a fixed reply
    sequence (strings become 200 chat bodies; TransportReply and
    exceptions pass through)."""
    transport = MockTransport()
    transport.script_rule(lambda _payload: True, *replies)
    client = make_client(transport, model=model, policy=policy)
    return client, transport


def reply_200(content: str, finish_reason: str = "stop") -> TransportReply:
    return TransportReply(status=200, body=MockTransport.chat_body(content, finish_reason))


def reply_status(status: int, body: str = "") -> TransportReply:
    return TransportReply(status=status, body=body)

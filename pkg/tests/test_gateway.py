from __future__ import annotations

import json
import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from summforge.gateway import (
    ChatRequest,
    FinishReason,
    Gateway,
    HttpStatusError,
    Message,
    MockTransport,
    ResponseParseError,
    RetriesExhaustedError,
    RetryPolicy,
    TransportTimeout,
    serialize_request,
)
from summforge.mocks import reply_200, reply_status, scripted_client


def request(content="hi", **overrides):
    kwargs = dict(
        endpoint="mock:ep",
        model="m1",
        messages=(Message("system", "sys"), Message("user", content)),
    )
    kwargs.update(overrides)
    return ChatRequest(**kwargs)


def gateway_with(*replies, policy=None, sleeps=None):
    transport = MockTransport()
    transport.script_rule(lambda _p: True, *replies)
    recorded = sleeps if sleeps is not None else []
    gw = Gateway(transport, policy=policy, sleep=recorded.append, rng=random.Random(0))
    return gw, transport, recorded


class TestSerialization:
    def test_stable_bytes(self):
        req = request()
        assert serialize_request(req) == serialize_request(request())
        body = json.loads(serialize_request(req))
        assert list(body.keys()) == ["model", "messages", "temperature", "max_tokens"]

    def test_greedy_defaults(self):
        req = request()
        assert req.temperature == 0.0
        assert req.max_tokens == 256

    def test_empty_messages_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            ChatRequest(endpoint="e", model="m", messages=())

    def test_bad_role_rejected(self):
        with pytest.raises(ValueError, match="invalid role"):
            Message("tool", "x")


class TestChatComplete:
    def test_fixed_mock_text(self):
        gw, _, _ = gateway_with("canned text")
        resp = gw.chat_complete(request())
        assert resp.content == "canned text"
        assert resp.finish_reason is FinishReason.STOP

    def test_rate_limited_twice_then_success(self):
        gw, transport, sleeps = gateway_with(
            reply_status(429), reply_status(429), reply_200("done"),
            policy=RetryPolicy(max_attempts=3),
        )
        resp = gw.chat_complete(request())
        assert resp.content == "done"
        assert len(transport.requests) == 3
        assert len(sleeps) == 2

    def test_client_error_immediate(self):
        gw, transport, sleeps = gateway_with(reply_status(400, "bad request"))
        with pytest.raises(HttpStatusError) as excinfo:
            gw.chat_complete(request())
        assert excinfo.value.status == 400
        assert len(transport.requests) == 1
        assert sleeps == []

    def test_exhausted_retries_carry_last_failure(self):
        gw, transport, _ = gateway_with(
            reply_status(503), policy=RetryPolicy(max_attempts=3)
        )
        with pytest.raises(RetriesExhaustedError) as excinfo:
            gw.chat_complete(request())
        assert excinfo.value.attempts == 3
        assert isinstance(excinfo.value.last, HttpStatusError)
        assert excinfo.value.last.status == 503
        assert len(transport.requests) == 3

    def test_timeout_retried(self):
        gw, transport, _ = gateway_with(
            TransportTimeout("slow"), reply_200("ok"), policy=RetryPolicy(max_attempts=2)
        )
        assert gw.chat_complete(request()).content == "ok"
        assert len(transport.requests) == 2

    def test_malformed_body_is_parse_error_not_retried(self):
        gw, transport, _ = gateway_with(
            reply_status(200, "{not json"), policy=RetryPolicy(max_attempts=3)
        )
        with pytest.raises(ResponseParseError):
            gw.chat_complete(request())
        assert len(transport.requests) == 1

    def test_finish_reason_length(self):
        gw, _, _ = gateway_with(reply_200("partial", finish_reason="length"))
        assert gw.chat_complete(request()).finish_reason is FinishReason.LENGTH

    def test_usage_parsed(self):
        body = json.dumps({
            "choices": [{"message": {"content": "x"}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3},
        })
        gw, _, _ = gateway_with(reply_status(200, body))
        usage = gw.chat_complete(request()).usage
        assert usage is not None and (usage.prompt_tokens, usage.completion_tokens) == (12, 3)

    def test_retry_class_not_in_policy_raises_directly(self):
        policy = RetryPolicy(max_attempts=3, retry_on=frozenset())
        gw, transport, _ = gateway_with(reply_status(429), policy=policy)
        with pytest.raises(HttpStatusError):
            gw.chat_complete(request())
        assert len(transport.requests) == 1

    def test_hash_keyed_script(self):
        transport = MockTransport()
        req = request("specific")
        import hashlib

        digest = hashlib.sha256(serialize_request(req).encode()).hexdigest()
        transport.script_hash(digest, "keyed reply")
        gw = Gateway(transport, sleep=lambda _s: None)
        assert gw.chat_complete(req).content == "keyed reply"


class TestBackoff:
    @given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=80)
    def test_sequence_nondecreasing_and_capped(self, attempts, seed):
        policy = RetryPolicy(max_attempts=attempts + 1, base_backoff=0.5,
                             backoff_multiplier=2.0, max_backoff=8.0,
                             jitter_fraction=0.5)
        rng = random.Random(seed)
        delays = [policy.delay(i, rng) for i in range(1, attempts + 1)]
        assert all(d <= 8.0 for d in delays)
        assert all(b >= a for a, b in zip(delays, delays[1:]))

    def test_jitter_bounded_by_multiplier(self):
        with pytest.raises(ValueError, match="jitter_fraction"):
            RetryPolicy(backoff_multiplier=1.2, jitter_fraction=0.5)


class TestConcurrencyCap:
    def test_in_flight_bounded(self):
        cap = 3
        active = 0
        peak = 0
        lock = threading.Lock()

        class SlowTransport:
            def post(self, url, body, headers, timeout):
                nonlocal active, peak
                with lock:
                    active += 1
                    peak = max(peak, active)
                threading.Event().wait(0.01)
                with lock:
                    active -= 1
                return reply_200("ok")

        gw = Gateway(SlowTransport(), concurrency=cap, sleep=lambda _s: None)
        threads = [threading.Thread(target=lambda: gw.chat_complete(request(f"r{i}")))
                   for i in range(12)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert peak <= cap


class TestModelClient:
    def test_summarize_helper(self):
        from summforge.gateway import summarize

        client, transport = scripted_client("teacher summary")
        result = summarize(client, "speaker 0: hi\nSummarize.", "sys text")
        assert result.text == "teacher summary"
        assert transport.requests[0]["messages"][0]["content"] == "sys text"

    def test_profile_on_the_wire(self):
        client, transport = scripted_client("a summary")
        client.complete("user message", system="sys prompt")
        (sent,) = transport.requests
        assert sent["temperature"] == 0
        assert sent["max_tokens"] == 256
        assert sent["messages"][0] == {"role": "system", "content": "sys prompt"}
        assert sent["messages"][1]["role"] == "user"

    def test_empty_completion_flagged_not_failed(self):
        client, _ = scripted_client(reply_200(""))
        result = client.complete("u", system="s")
        assert result.text == ""
        assert "empty completion" in result.warnings

    def test_length_cap_flagged(self):
        client, _ = scripted_client(reply_200("cut off", finish_reason="length"))
        result = client.complete("u")
        assert result.finish_reason is FinishReason.LENGTH
        assert any("max_tokens" in w for w in result.warnings)


class TestAuditLog:
    def test_audit_records_pairs(self, tmp_path):
        audit = tmp_path / "audit.jsonl"
        transport = MockTransport()
        transport.script_rule(lambda _p: True, "reply")
        gw = Gateway(transport, audit_path=str(audit), sleep=lambda _s: None)
        gw.chat_complete(request())
        rows = [json.loads(line) for line in audit.read_text().splitlines()]
        assert len(rows) == 1
        assert rows[0]["status"] == 200
        assert rows[0]["request"]["model"] == "m1"

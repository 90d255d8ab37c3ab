from __future__ import annotations

import json

import pytest
import requests
from hypothesis import given, strategies as st

from visagent import (
    AuthError,
    ChatTurn,
    HttpModelClient,
    ModelParams,
    ModelTransportError,
    Role,
    ScriptedModelClient,
    count_tokens_fallback,
)

PARAMS = ModelParams()
TURNS = [ChatTurn(Role.SYSTEM, "sys"), ChatTurn(Role.USER, "hi")]


class TestCountTokensFallback:
    def test_empty(self):
        assert count_tokens_fallback("") == 0

    def test_four_chars(self):
        assert count_tokens_fallback("abcd") == 1

    def test_nine_chars_ceiling(self):
        assert count_tokens_fallback("abcdefghi") == 3

    @given(st.text(max_size=200), st.text(max_size=50))
    def test_monotone_in_length(self, a, b):
        assert count_tokens_fallback(a + b) >= count_tokens_fallback(a)


class TestScriptedClient:
    def test_replays_in_order(self):
        client = ScriptedModelClient(["hello", "world"])
        assert client.complete(TURNS, PARAMS).text == "hello"
        assert client.complete(TURNS, PARAMS).text == "world"
        assert client.calls == 2

    def test_exhaustion_raises_transport_error(self):
        client = ScriptedModelClient(["hello"])
        client.complete(TURNS, PARAMS)
        with pytest.raises(ModelTransportError):
            client.complete(TURNS, PARAMS)

    def test_explicit_token_counts_surface_as_usage(self):
        client = ScriptedModelClient([("turn", 900)])
        result = client.complete(TURNS, PARAMS)
        assert result.completion_tokens == 900

    def test_plain_entries_report_no_usage(self):
        client = ScriptedModelClient(["some text"])
        assert client.complete(TURNS, PARAMS).completion_tokens is None

    def test_requires_system_first(self):
        client = ScriptedModelClient(["x"])
        with pytest.raises(ValueError):
            client.complete([ChatTurn(Role.USER, "hi")], PARAMS)

    def test_records_prompts(self):
        client = ScriptedModelClient(["x"])
        client.complete(TURNS, PARAMS)
        assert client.prompts == [tuple(TURNS)]


class _FakeResponse:
    def __init__(self, status_code: int, body: dict | None = None, text: str = ""):
        self.status_code = status_code
        self._body = body
        self.text = text or (json.dumps(body) if body else "")

    def json(self):
        if self._body is None:
            raise ValueError("no body")
        return self._body


class _FakeSession:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.requests = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append({"url": url, "json": json, "headers": headers})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def _ok_response(text="hi", usage=None):
    body = {"choices": [{"message": {"content": text}}]}
    if usage:
        body["usage"] = usage
    return _FakeResponse(200, body)


def _client(session, **kwargs):
    return HttpModelClient(
        "http://model.test/v1", "test-model", session=session, sleep=lambda s: None, **kwargs
    )


class TestHttpClient:
    def test_success_with_usage(self):
        session = _FakeSession([_ok_response("hello", {"prompt_tokens": 12, "completion_tokens": 5})])
        result = _client(session).complete(TURNS, PARAMS)
        assert result.text == "hello"
        assert result.prompt_tokens == 12
        assert result.completion_tokens == 5

    def test_usage_absent(self):
        session = _FakeSession([_ok_response("hello")])
        result = _client(session).complete(TURNS, PARAMS)
        assert result.completion_tokens is None

    def test_retries_transient_then_succeeds(self):
        session = _FakeSession([requests.ConnectionError("boom"), _FakeResponse(503), _ok_response()])
        result = _client(session).complete(TURNS, PARAMS)
        assert result.text == "hi"
        assert len(session.requests) == 3

    def test_retries_exhausted(self):
        session = _FakeSession([requests.ConnectionError("boom")] * 3)
        with pytest.raises(ModelTransportError):
            _client(session).complete(TURNS, PARAMS)
        assert len(session.requests) == 3

    def test_auth_error_not_retried(self):
        session = _FakeSession([_FakeResponse(401, text="denied")])
        with pytest.raises(AuthError):
            _client(session).complete(TURNS, PARAMS)
        assert len(session.requests) == 1

    def test_client_error_not_retried(self):
        session = _FakeSession([_FakeResponse(400, text="bad request")])
        with pytest.raises(ModelTransportError):
            _client(session).complete(TURNS, PARAMS)
        assert len(session.requests) == 1

    def test_request_carries_params_and_messages(self):
        session = _FakeSession([_ok_response()])
        _client(session).complete(TURNS, ModelParams(temperature=0.5, max_tokens=64, seed=7))
        sent = session.requests[0]["json"]
        assert sent["model"] == "test-model"
        assert sent["temperature"] == 0.5
        assert sent["max_tokens"] == 64
        assert sent["seed"] == 7
        assert sent["messages"][0] == {"role": "system", "content": "sys"}

    def test_tool_turns_map_to_user_role(self):
        session = _FakeSession([_ok_response()])
        turns = TURNS + [ChatTurn(Role.TOOL, "TOOL RESULT (ocr):\nk=120")]
        _client(session).complete(turns, PARAMS)
        assert session.requests[0]["json"]["messages"][-1]["role"] == "user"

    def test_image_attached_as_data_uri(self, tmp_path):
        image = tmp_path / "chart.png"
        image.write_bytes(b"\x89PNG\r\n\x1a\nfake")
        session = _FakeSession([_ok_response()])
        turns = [ChatTurn(Role.SYSTEM, "sys"), ChatTurn(Role.USER, "look", image=str(image))]
        _client(session).complete(turns, PARAMS)
        content = session.requests[0]["json"]["messages"][1]["content"]
        assert content[0] == {"type": "text", "text": "look"}
        assert content[1]["image_url"]["url"].startswith("data:image/png;base64,")

    def test_oversized_image_rejected(self, tmp_path):
        from visagent.model import MAX_IMAGE_BYTES

        image = tmp_path / "big.png"
        image.write_bytes(b"0" * (MAX_IMAGE_BYTES + 1))
        session = _FakeSession([_ok_response()])
        turns = [ChatTurn(Role.SYSTEM, "sys"), ChatTurn(Role.USER, "look", image=str(image))]
        with pytest.raises(ValueError):
            _client(session).complete(turns, PARAMS)


def test_images_only_on_user_or_tool_turns():
    with pytest.raises(ValueError):
        ChatTurn(Role.ASSISTANT, "x", image="a.png")

"""Chat-completion model clients with token-usage capture.

Two backends share one ``complete()`` contract: ``HttpModelClient`` talks to
any chat-completions-compatible endpoint (images as base64 content parts),
``ScriptedModelClient`` replays a fixed queue for deterministic tests. Token
usage is surfaced when the endpoint reports it; callers fall back to
``count_tokens_fallback`` otherwise.
"""

from __future__ import annotations

import base64
import json
import logging
import mimetypes
import os
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import requests

logger = logging.getLogger(__name__)
wire_logger = logging.getLogger("visagent.wire")

#: Hard cap on attached image payloads; downscaling is a documented pre-step.
MAX_IMAGE_BYTES = 8 * 1024 * 1024


class ModelTransportError(Exception):
    """Endpoint unreachable, exhausted, or responded outside the protocol."""


class AuthError(Exception):
    """Credential rejection; never retried."""


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


@dataclass(frozen=True)
class ChatTurn:
    role: Role
    content: str
    image: str | None = None

    def __post_init__(self) -> None:
        if self.image is not None and self.role not in (Role.USER, Role.TOOL):
            raise ValueError("images are only allowed on user/tool turns")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    prompt_tokens: int | None
    completion_tokens: int | None
    latency_ms: int

    def __post_init__(self) -> None:
        for value in (self.prompt_tokens, self.completion_tokens):
            if value is not None and value < 0:
                raise ValueError("token counts must be >= 0 when present")


def count_tokens_fallback(text: str) -> int:
    """Approximate a token count as ceil(len/4); monotone in text length."""
    return (len(text) + 3) // 4


def _check_turns(turns: Sequence[ChatTurn]) -> None:
    if not turns:
        raise ValueError("turns must be non-empty")
    if turns[0].role is not Role.SYSTEM:
        raise ValueError("first turn must be the system turn")


class ModelClient:
    """Interface: ``complete(turns, params) -> CompletionResult``."""

    def complete(self, turns, params) -> CompletionResult:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": "unknown"}


class ScriptedModelClient(ModelClient):
    """Replays a queue of canned completions exactly once, in order.

    Entries are either plain strings (token count approximated) or
    ``(text, token_count)`` pairs for tests that pin usage. Exhausting the
    queue raises ``ModelTransportError`` ; that surfaces scripting bugs and
    doubles as the transport-failure path in failure-injection tests. All
    prompts are recorded on ``self.prompts`` for gating assertions.
    """

    def __init__(self, script: Sequence[str | tuple[str, int] | list]) -> None:
        queue: deque[tuple[str, int | None]] = deque()
        for entry in script:
            if isinstance(entry, str):
                queue.append((entry, None))
            else:
                text, tokens = entry
                queue.append((str(text), int(tokens)))
        self._queue = queue
        self.calls = 0
        self.prompts: list[tuple[ChatTurn, ...]] = []

    def complete(self, turns, params) -> CompletionResult:
        _check_turns(turns)
        self.prompts.append(tuple(turns))
        self.calls += 1
        if not self._queue:
            raise ModelTransportError(f"scripted queue exhausted after {self.calls - 1} replies")
        text, tokens = self._queue.popleft()
        if tokens is None:
            tokens = count_tokens_fallback(text)
            reported = None
        else:
            reported = tokens
        return CompletionResult(
            text=text,
            prompt_tokens=None,
            completion_tokens=reported,
            latency_ms=0,
        )

    def describe(self) -> dict:
        return {"kind": "scripted"}


_TRANSIENT_STATUS = {429, 500, 502, 503, 504}


class HttpModelClient(ModelClient):
    """Client for chat-completions-compatible HTTP endpoints.

    Retries transient transport failures up to ``max_retries`` times with
    exponential backoff; auth rejections are never retried. Request and
    response bodies are logged (auth redacted) on the ``visagent.wire``
    logger when ``debug_wire`` is set.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str | None = None,
        *,
        session: requests.Session | None = None,
        max_retries: int = 2,
        backoff_s: float = 0.25,
        sleep: Callable[[float], None] = time.sleep,
        timeout_s: float = 120.0,
        debug_wire: bool = False,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self._session = session or requests.Session()
        self._max_retries = max_retries
        self._backoff_s = backoff_s
        self._sleep = sleep
        self._timeout_s = timeout_s
        self._debug_wire = debug_wire

    def complete(self, turns, params) -> CompletionResult:
        _check_turns(turns)
        payload = {
            "model": self.model,
            "messages": [_turn_to_message(t) for t in turns],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "seed": params.seed,
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env, "") if self.api_key_env else ""
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        if self._debug_wire:
            wire_logger.debug("request %s", json.dumps(_redact_images(payload), sort_keys=True))

        last_error: Exception | None = None
        for attempt in range(self._max_retries + 1):
            if attempt:
                self._sleep(self._backoff_s * (2 ** (attempt - 1)))
            started = time.monotonic()
            try:
                response = self._session.post(
                    f"{self.endpoint}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self._timeout_s,
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
                continue
            except requests.RequestException as exc:
                raise ModelTransportError(f"request failed: {exc}") from exc
            latency_ms = int((time.monotonic() - started) * 1000)
            if response.status_code in (401, 403):
                raise AuthError(f"endpoint rejected credentials ({response.status_code})")
            if response.status_code in _TRANSIENT_STATUS:
                last_error = ModelTransportError(
                    f"transient status {response.status_code}: {response.text[:200]}"
                )
                continue
            if response.status_code != 200:
                raise ModelTransportError(
                    f"status {response.status_code}: {response.text[:200]}"
                )
            if self._debug_wire:
                wire_logger.debug("response %s", response.text[:4000])
            return _parse_completion(response, latency_ms)
        raise ModelTransportError(f"retries exhausted: {last_error}")

    def describe(self) -> dict:
        return {"kind": "http", "endpoint": self.endpoint, "model": self.model}


def _parse_completion(response, latency_ms: int) -> CompletionResult:
    try:
        body = response.json()
        text = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ModelTransportError(f"malformed completion body: {exc}") from exc
    usage = body.get("usage") or {}
    prompt_tokens = usage.get("prompt_tokens")
    completion_tokens = usage.get("completion_tokens")
    return CompletionResult(
        text=text if isinstance(text, str) else "",
        prompt_tokens=int(prompt_tokens) if prompt_tokens is not None else None,
        completion_tokens=int(completion_tokens) if completion_tokens is not None else None,
        latency_ms=latency_ms,
    )


def _turn_to_message(turn: ChatTurn) -> dict:
    # Tool observations travel as user text; the action grammar is text-level
    # by design, so no function-calling message shapes are used.
    role = "user" if turn.role is Role.TOOL else turn.role.value
    if turn.image is None:
        return {"role": role, "content": turn.content}
    return {
        "role": role,
        "content": [
            {"type": "text", "text": turn.content},
            {"type": "image_url", "image_url": {"url": _image_data_uri(turn.image)}},
        ],
    }


def _image_data_uri(image_ref: str) -> str:
    data = Path(image_ref).read_bytes()
    if len(data) > MAX_IMAGE_BYTES:
        raise ValueError(
            f"image {image_ref} exceeds {MAX_IMAGE_BYTES} bytes; downscale before sending"
        )
    mime = mimetypes.guess_type(image_ref)[0] or "image/png"
    return f"data:{mime};base64,{base64.b64encode(data).decode('ascii')}"


def _redact_images(payload: dict) -> dict:
    redacted = json.loads(json.dumps(payload))
    for message in redacted.get("messages", []):
        content = message.get("content")
        if isinstance(content, list):
            for part in content:
                if part.get("type") == "image_url":
                    part["image_url"] = {"url": "<image redacted>"}
    return redacted

"""Tool specs, registry, prompt rendering, and dispatch.

Four tools are routable — ``ocr``, ``caption``, ``vqa``, ``code`` — behind
one uniform dispatch interface. Backends are pluggable: a prompt-specialized
model endpoint, the sandboxed code worker, or a scripted map for tests.
Per-tool enable/disable drives the ablation grid; the prompt block and the
dispatch gate always agree because both read the same enabled set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Callable, Mapping

from .actions import canonical_call
from .model import ModelClient, ChatTurn, Role, count_tokens_fallback
from .sandbox import SandboxStatus, SandboxWorkerClient
from .types import AgentConfig, ModelParams

logger = logging.getLogger(__name__)

#: Tool payloads are tail-truncated to this many characters so a single
#: observation cannot blow the token budget.
RESULT_CHAR_CAP = 2048
TRUNCATION_MARKER = "\n[truncated]"


class ToolDisabledError(Exception):
    """Dispatch reached a disabled or unregistered tool: a config/prompt leak."""


class ToolBackendError(Exception):
    """The backend failed; wrapped into a failed result, never aborts the loop."""


class ToolBackendKind(str, Enum):
    MODEL_ENDPOINT = "endpoint"
    SANDBOX_WORKER = "worker"
    SCRIPTED = "scripted"


TOOL_DESCRIPTIONS = {
    "ocr": "Read text and numbers out of the image.",
    "caption": "Describe what the image shows.",
    "vqa": "Ask a direct question about the image.",
    "code": "Run a Python snippet in a sandbox and return its output.",
}

ARG_SCHEMAS: Mapping[str, Mapping[str, str]] = {
    "ocr": {"region": "string"},
    "caption": {"detail": "string"},
    "vqa": {"question": "string"},
    "code": {"source": "string", "timeout_s": "number"},
}

REQUIRED_ARGS: Mapping[str, tuple[str, ...]] = {
    "ocr": (),
    "caption": (),
    "vqa": ("question",),
    "code": ("source",),
}

_TYPE_CHECKS: Mapping[str, tuple[type, ...]] = {
    "string": (str,),
    "number": (int, float),
}


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    args_schema: Mapping[str, str]
    enabled: bool
    backend: ToolBackendKind

    def __post_init__(self) -> None:
        if self.name == "code" and self.backend is ToolBackendKind.MODEL_ENDPOINT:
            raise ValueError("the code tool requires a worker or scripted backend")


@dataclass(frozen=True)
class ToolCallRecord:
    tool: str
    args: Mapping
    step_index: int


@dataclass(frozen=True)
class ToolResultRecord:
    payload: str
    success: bool
    error: str | None
    duration_ms: int
    token_cost: int

    def __post_init__(self) -> None:
        if self.token_cost < 0:
            raise ValueError("token_cost must be >= 0")
        if not self.success and not self.error:
            raise ValueError("failed results must carry error detail")


class ToolBackend:
    """Interface: ``invoke(name, args, image_ref) -> (payload, duration_ms)``."""

    kind: ToolBackendKind

    def invoke(self, name: str, args: Mapping, image_ref: str) -> tuple[str, int]:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind.value}


class ScriptedToolBackend(ToolBackend):
    """Deterministic map from canonical calls to payloads: identical call,
    identical result. Unmapped calls fail unless a default is given."""

    kind = ToolBackendKind.SCRIPTED

    def __init__(
        self,
        responses: Mapping[str, str] | None = None,
        default: str | None = None,
        fn: Callable[[str, Mapping, str], str] | None = None,
    ) -> None:
        self._responses = dict(responses or {})
        self._default = default
        self._fn = fn

    def invoke(self, name: str, args: Mapping, image_ref: str) -> tuple[str, int]:
        if self._fn is not None:
            return self._fn(name, args, image_ref), 0
        key = canonical_call(name, args)
        if key in self._responses:
            return self._responses[key], 0
        if self._default is not None:
            return self._default, 0
        raise ToolBackendError(f"no scripted response for {key}")


class ModelEndpointToolBackend(ToolBackend):
    """A visual module served as a prompt-specialized model endpoint call."""

    kind = ToolBackendKind.MODEL_ENDPOINT

    def __init__(
        self,
        client: ModelClient,
        system_prompt: str,
        params: ModelParams = ModelParams(temperature=0.0, max_tokens=512),
    ) -> None:
        self._client = client
        self._system_prompt = system_prompt
        self._params = params

    def invoke(self, name: str, args: Mapping, image_ref: str) -> tuple[str, int]:
        turns = [
            ChatTurn(Role.SYSTEM, self._system_prompt),
            ChatTurn(Role.USER, _endpoint_query(name, args), image=image_ref),
        ]
        try:
            result = self._client.complete(turns, self._params)
        except Exception as exc:
            raise ToolBackendError(f"{name} endpoint failed: {exc}") from exc
        return result.text, result.latency_ms

    def describe(self) -> dict:
        return {"kind": self.kind.value, "client": self._client.describe()}


def _endpoint_query(name: str, args: Mapping) -> str:
    if name == "ocr":
        return f"Extract all text in the image (region: {args.get('region', 'full')})."
    if name == "caption":
        return f"Describe the image (detail: {args.get('detail', 'normal')})."
    if name == "vqa":
        return str(args.get("question", ""))
    return f"{name}: {canonical_call(name, args)}"


class SandboxCodeToolBackend(ToolBackend):
    """Routes code snippets to the sandboxed worker process."""

    kind = ToolBackendKind.SANDBOX_WORKER

    def __init__(self, client: SandboxWorkerClient, default_timeout_s: float = 10.0) -> None:
        self._client = client
        self._default_timeout_s = default_timeout_s

    def invoke(self, name: str, args: Mapping, image_ref: str) -> tuple[str, int]:
        source = str(args["source"])
        timeout_s = float(args.get("timeout_s", self._default_timeout_s))
        result = self._client.execute(source, timeout_s=timeout_s)
        if result.status is not SandboxStatus.OK:
            detail = result.stderr.strip()[-500:] or result.status.value
            raise ToolBackendError(f"code execution {result.status.value}: {detail}")
        return result.stdout, result.duration_ms

    def describe(self) -> dict:
        return {"kind": self.kind.value, "client": self._client.describe()}


class ToolRegistry:
    """Immutable name -> (spec, backend) mapping; safe for concurrent dispatch."""

    def __init__(self, entries: Mapping[str, tuple[ToolSpec, ToolBackend]]) -> None:
        self._entries = MappingProxyType(dict(sorted(entries.items())))

    @classmethod
    def build(
        cls,
        backends: Mapping[str, ToolBackend],
        enabled: frozenset[str] | set[str] | None = None,
    ) -> "ToolRegistry":
        """Register specs for the given backends; unknown names get empty schemas."""
        enabled_set = set(backends) if enabled is None else set(enabled)
        entries = {}
        for name, backend in backends.items():
            spec = ToolSpec(
                name=name,
                description=TOOL_DESCRIPTIONS.get(name, name),
                args_schema=ARG_SCHEMAS.get(name, {}),
                enabled=name in enabled_set,
                backend=backend.kind,
            )
            entries[name] = (spec, backend)
        return cls(entries)

    def registered_names(self) -> frozenset[str]:
        return frozenset(self._entries)

    def enabled_names(self) -> frozenset[str]:
        return frozenset(name for name, (spec, _) in self._entries.items() if spec.enabled)

    def spec(self, name: str) -> ToolSpec:
        return self._entries[name][0]

    def backend(self, name: str) -> ToolBackend:
        return self._entries[name][1]

    def with_enabled(self, names: frozenset[str] | set[str]) -> "ToolRegistry":
        unknown = set(names) - set(self._entries)
        if unknown:
            raise ValueError(f"enabled tools not registered: {sorted(unknown)}")
        entries = {}
        for name, (spec, backend) in self._entries.items():
            entries[name] = (
                ToolSpec(spec.name, spec.description, spec.args_schema, name in names, spec.backend),
                backend,
            )
        return ToolRegistry(entries)

    def describe(self) -> dict:
        """Stable description used in config fingerprints."""
        return {
            name: {
                "enabled": spec.enabled,
                "backend": backend.describe(),
                "args": dict(spec.args_schema),
            }
            for name, (spec, backend) in self._entries.items()
        }


def render_tool_prompt(registry: ToolRegistry, config: AgentConfig) -> str:
    """The tool-description block for the system prompt.

    Lists exactly the config-enabled tools, lexicographically, so prompts are
    deterministic and disabled tool specs never leak into the model's view.
    An empty set renders to an empty block (plain chain-of-thought).
    """
    names = sorted(config.enabled_tools)
    unknown = set(names) - set(registry.registered_names())
    if unknown:
        raise ValueError(f"enabled tools not registered: {sorted(unknown)}")
    if not names:
        return ""
    lines = ["Available tools (request one per turn with `TOOL: <name> <json-args>`):"]
    for name in names:
        spec = registry.spec(name)
        schema = ", ".join(f'"{arg}": {kind}' for arg, kind in sorted(spec.args_schema.items()))
        lines.append(f"- {name}: {spec.description} Args: {{{schema}}}")
    return "\n".join(lines)


def dispatch(call: ToolCallRecord, image_ref: str, registry: ToolRegistry) -> ToolResultRecord:
    """Route one tool call to its backend and wrap the outcome.

    Raises ``ToolDisabledError`` for unregistered/disabled tools (the agent
    gates those before dispatch, so reaching it means a leak). Backend
    failures and argument-schema violations come back as failed results so
    the agent loop continues.
    """
    name = call.tool
    if name not in registry.registered_names():
        raise ToolDisabledError(f"tool {name!r} is not registered")
    spec = registry.spec(name)
    if not spec.enabled:
        raise ToolDisabledError(f"tool {name!r} is disabled")
    problem = _validate_args(spec, call.args)
    if problem:
        return _failed_result(f"invalid arguments for {name}: {problem}")
    try:
        payload, duration_ms = registry.backend(name).invoke(name, call.args, image_ref)
    except ToolBackendError as exc:
        return _failed_result(str(exc))
    except Exception as exc:  # backend bug: contained, surfaced as failure
        logger.exception("tool backend %s raised unexpectedly", name)
        return _failed_result(f"{name} backend error: {exc}")
    payload = _cap_payload(payload)
    return ToolResultRecord(
        payload=payload,
        success=True,
        error=None,
        duration_ms=duration_ms,
        token_cost=count_tokens_fallback(payload),
    )


def _validate_args(spec: ToolSpec, args: Mapping) -> str | None:
    for key in args:
        if key not in spec.args_schema:
            return f"unknown argument {key!r}"
    for key in REQUIRED_ARGS.get(spec.name, ()):
        if key not in args:
            return f"missing required argument {key!r}"
    for key, value in args.items():
        expected = _TYPE_CHECKS.get(spec.args_schema[key])
        if expected and not isinstance(value, expected):
            return f"argument {key!r} must be a {spec.args_schema[key]}"
    return None


def _failed_result(error: str) -> ToolResultRecord:
    payload = _cap_payload(f"ERROR: {error}")
    return ToolResultRecord(
        payload=payload,
        success=False,
        error=error,
        duration_ms=0,
        token_cost=count_tokens_fallback(payload),
    )


def _cap_payload(payload: str) -> str:
    if len(payload) <= RESULT_CHAR_CAP:
        return payload
    head = RESULT_CHAR_CAP - len(TRUNCATION_MARKER)
    return payload[:head] + TRUNCATION_MARKER

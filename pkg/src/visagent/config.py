"""Run configuration files: model endpoint, tool backends, budget, seeds.

The config is one JSON document (secrets stay in environment variables,
referenced by name). Scripted model and tool backends are first-class so
fixture runs work end-to-end through the CLI; when the model backend is
scripted, run timing switches to a deterministic counter clock so repeated
fixture runs are byte-identical.

Documented key set::

    {
      "model": {"backend": "http", "endpoint": "...", "model": "...",
                "api_key_env": "MODEL_API_KEY"}
             | {"backend": "scripted", "script": ["..."],
                "scripts": {"<item-id>": ["..."]}},
      "tools": {
        "<name>": {"backend": "scripted", "responses": {"<canonical call>": "payload"},
                   "default": "..."}
                | {"backend": "endpoint", "endpoint": "...", "model": "...",
                   "api_key_env": "...", "system_prompt": "..."}
                | {"backend": "worker", "cmd": ["python", "-m", "codeworker"],
                   "max_output_bytes": 65536}
      },
      "enabled_tools": ["caption", "code", "ocr", "vqa"],
      "budget": {"soft_warn": 2000, "hard_cutoff": 4000},
      "backtrace_enabled": true, "verify_enabled": true, "max_backtracks": 3,
      "reasoning_mode": "qwq",
      "model_params": {"temperature": 0.0, "max_tokens": 1024},
      "seeds": [1, 2, 3], "parallelism": 1,
      "ablation_grid": [{"label": "Full", "disabled": []}]
    }

Scripted model entries are strings or ``[text, token_count]`` pairs; the
per-item ``scripts`` map wins over the shared ``script`` list.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .harness import AblationConfig, ClockFactory, ModelFactory
from .model import HttpModelClient, ModelClient, ScriptedModelClient
from .sandbox import SandboxWorkerClient
from .tools import (
    ModelEndpointToolBackend,
    SandboxCodeToolBackend,
    ScriptedToolBackend,
    ToolBackend,
    ToolRegistry,
)
from .types import AgentConfig, BenchmarkItem, ModelParams, TokenBudget


class ConfigError(Exception):
    pass


DEFAULT_TOOL_SYSTEM_PROMPTS = {
    "ocr": "You are an OCR engine. Transcribe all text and numbers in the image, nothing else.",
    "caption": "You describe images accurately and concisely.",
    "vqa": "Answer the question about the image directly and concisely.",
}


def _counter_clock() -> Callable[[], float]:
    ticks = iter(range(10**9))

    def clock() -> float:
        return next(ticks) * 0.001

    return clock


@dataclass
class RunSetup:
    """Everything the harness needs, materialized from one config file."""

    agent_config: AgentConfig
    registry: ToolRegistry
    model_factory: ModelFactory
    seeds: list[int]
    parallelism: int
    ablation_grid: list[AblationConfig] = field(default_factory=list)
    clock_factory: ClockFactory | None = None


def load_run_config(path: str | Path, *, debug_wire: bool = False) -> RunSetup:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return build_run_setup(payload, debug_wire=debug_wire)


def build_run_setup(payload: Mapping, *, debug_wire: bool = False) -> RunSetup:
    try:
        agent_config = _agent_config(payload)
        registry = _registry(payload.get("tools", {}), agent_config, debug_wire=debug_wire)
        model_factory, scripted = _model_factory(payload.get("model", {}), debug_wire=debug_wire)
        grid = [
            AblationConfig(label=str(g["label"]), disabled=frozenset(g.get("disabled", [])))
            for g in payload.get("ablation_grid", [])
        ]
        seeds = [int(s) for s in payload.get("seeds", [0])]
        parallelism = int(payload.get("parallelism", 1))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return RunSetup(
        agent_config=agent_config,
        registry=registry,
        model_factory=model_factory,
        seeds=seeds,
        parallelism=parallelism,
        ablation_grid=grid,
        clock_factory=_counter_clock if scripted else None,
    )


def _agent_config(payload: Mapping) -> AgentConfig:
    budget_cfg = payload.get("budget", {})
    params_cfg = payload.get("model_params", {})
    tools_cfg = payload.get("tools", {})
    enabled = payload.get("enabled_tools")
    if enabled is None:
        enabled = sorted(tools_cfg)
    return AgentConfig(
        enabled_tools=frozenset(str(t) for t in enabled),
        backtrace_enabled=bool(payload.get("backtrace_enabled", True)),
        verify_enabled=bool(payload.get("verify_enabled", True)),
        max_backtracks=int(payload.get("max_backtracks", 3)),
        budget=TokenBudget(
            soft_warn=int(budget_cfg.get("soft_warn", 2000)),
            hard_cutoff=int(budget_cfg.get("hard_cutoff", 4000)),
        ),
        reasoning_mode=str(payload.get("reasoning_mode", "qwq")),
        model_params=ModelParams(
            temperature=float(params_cfg.get("temperature", 0.0)),
            max_tokens=int(params_cfg.get("max_tokens", 1024)),
            seed=int(params_cfg.get("seed", 0)),
        ),
    )


def _registry(tools_cfg: Mapping, agent_config: AgentConfig, *, debug_wire: bool) -> ToolRegistry:
    backends: dict[str, ToolBackend] = {}
    for name, cfg in tools_cfg.items():
        backends[str(name)] = _tool_backend(str(name), cfg, debug_wire=debug_wire)
    missing = agent_config.enabled_tools - set(backends)
    if missing:
        raise ConfigError(f"enabled tools without a backend: {sorted(missing)}")
    return ToolRegistry.build(backends, enabled=agent_config.enabled_tools)


def _tool_backend(name: str, cfg: Mapping, *, debug_wire: bool) -> ToolBackend:
    kind = cfg.get("backend")
    if kind == "scripted":
        return ScriptedToolBackend(
            responses=cfg.get("responses", {}), default=cfg.get("default")
        )
    if kind == "endpoint":
        client = HttpModelClient(
            endpoint=str(cfg["endpoint"]),
            model=str(cfg.get("model", "")),
            api_key_env=cfg.get("api_key_env"),
            debug_wire=debug_wire,
        )
        prompt = cfg.get("system_prompt") or DEFAULT_TOOL_SYSTEM_PROMPTS.get(
            name, "You are a helpful visual module."
        )
        return ModelEndpointToolBackend(client, prompt)
    if kind == "worker":
        if name != "code":
            raise ConfigError(f"tool {name!r}: only the code tool can use a worker backend")
        worker = SandboxWorkerClient(
            [str(part) for part in cfg["cmd"]],
            max_output_bytes=int(cfg.get("max_output_bytes", 65536)),
        )
        return SandboxCodeToolBackend(worker)
    raise ConfigError(f"tool {name!r}: unknown backend {kind!r}")


def _model_factory(cfg: Mapping, *, debug_wire: bool) -> tuple[ModelFactory, bool]:
    kind = cfg.get("backend", "http")
    if kind == "scripted":
        shared = list(cfg.get("script", []))
        per_item = {str(k): list(v) for k, v in cfg.get("scripts", {}).items()}

        def scripted_factory(item: BenchmarkItem, seed: int) -> ModelClient:
            return ScriptedModelClient(per_item.get(item.id, shared))

        return scripted_factory, True
    if kind == "http":
        endpoint = str(cfg["endpoint"])
        model = str(cfg.get("model", ""))
        api_key_env = cfg.get("api_key_env")

        def http_factory(item: BenchmarkItem, seed: int) -> ModelClient:
            return HttpModelClient(
                endpoint, model, api_key_env=api_key_env, debug_wire=debug_wire
            )

        return http_factory, False
    raise ConfigError(f"unknown model backend {kind!r}")

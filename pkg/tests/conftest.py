from __future__ import annotations

import pytest

from visagent import (
    AgentConfig,
    BenchmarkItem,
    Difficulty,
    ScriptedToolBackend,
    ToolRegistry,
)


def make_item(
    item_id: str = "q1",
    dataset: str = "tiny",
    choices: tuple[tuple[str, str], ...] | None = (("A", "one"), ("B", "two"), ("C", "three"), ("D", "four")),
    gold: str = "B",
    difficulty: Difficulty = Difficulty.EASY,
) -> BenchmarkItem:
    return BenchmarkItem(
        id=item_id,
        dataset=dataset,
        question="Which value does the chart show?",
        image_ref=f"images/{item_id}.png",
        choices=choices,
        gold_answer=gold,
        difficulty=difficulty,
    )


def make_registry(
    responses: dict[str, str] | None = None,
    default: str | None = "scripted observation",
    enabled: set[str] | None = None,
) -> ToolRegistry:
    backend = ScriptedToolBackend(responses=responses, default=default)
    backends = {name: backend for name in ("caption", "code", "ocr", "vqa")}
    return ToolRegistry.build(backends, enabled=enabled)


def counter_clock(step_s: float = 0.001):
    ticks = iter(range(10**9))

    def clock() -> float:
        return next(ticks) * step_s

    return clock


@pytest.fixture
def mc_item() -> BenchmarkItem:
    return make_item()


@pytest.fixture
def numeric_item() -> BenchmarkItem:
    return make_item(item_id="q-num", choices=None, gold="1250")


@pytest.fixture
def registry() -> ToolRegistry:
    return make_registry()


@pytest.fixture
def config() -> AgentConfig:
    return AgentConfig()

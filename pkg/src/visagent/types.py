"""Core domain types shared by the agent loop, harness, and diagnostics.

A run over one benchmark item produces a ``RunRecord`` wrapping a
``ReasoningTrace``; traces are ordered lists of ``ReasoningStep`` objects
whose token counts add up to the trace total. Steps discarded by a
backtrack stay in the trace (flagged) so diagnostics can measure wasted
tokens; only the active conversation context shrinks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Difficulty(str, Enum):
    EASY = "Easy"
    MEDIUM = "Medium"
    HARD = "Hard"
    UNKNOWN = "Unknown"


class StepKind(str, Enum):
    THOUGHT = "thought"
    TOOL_CALL = "tool_call"
    TOOL_RESULT = "tool_result"
    VERIFICATION = "verification"
    FINAL_ANSWER = "final_answer"
    BACKTRACK_MARKER = "backtrack_marker"


#: Step kinds that must carry a tool name.
_TOOL_KINDS = (StepKind.TOOL_CALL, StepKind.TOOL_RESULT)


class RunStatus(str, Enum):
    COMPLETED = "completed"
    UNFINISHED = "unfinished"
    ERROR = "error"


@dataclass(frozen=True)
class BenchmarkItem:
    """One benchmark question: text, image reference, optional choices, gold answer."""

    id: str
    dataset: str
    question: str
    image_ref: str
    choices: tuple[tuple[str, str], ...] | None = None
    gold_answer: str = ""
    difficulty: Difficulty = Difficulty.UNKNOWN

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("item id must be non-empty")
        if not self.image_ref:
            raise ValueError(f"item {self.id}: image_ref must be non-empty")
        if self.choices is not None:
            labels = [label for label, _ in self.choices]
            if len(set(labels)) != len(labels):
                raise ValueError(f"item {self.id}: duplicate choice labels")
            if self.gold_answer not in labels:
                raise ValueError(
                    f"item {self.id}: gold answer {self.gold_answer!r} not among "
                    f"choice labels {labels}"
                )


@dataclass
class ReasoningStep:
    """One entry in a reasoning trace.

    ``token_count`` is the model-reported completion usage for model-produced
    steps and the fallback approximation for tool payloads; it stays counted
    even when the step is later discarded by a backtrack.
    """

    index: int
    kind: StepKind
    text: str
    token_count: int
    tool_name: str | None = None
    discarded: bool = False

    def __post_init__(self) -> None:
        if self.token_count < 0:
            raise ValueError("token_count must be >= 0")
        if self.kind in _TOOL_KINDS and not self.tool_name:
            raise ValueError(f"{self.kind.value} step requires tool_name")
        if self.kind not in _TOOL_KINDS and self.tool_name is not None:
            raise ValueError(f"{self.kind.value} step must not carry tool_name")


@dataclass(frozen=True)
class BacktrackEvent:
    from_step: int
    to_checkpoint: int
    reason: str


@dataclass(frozen=True)
class TokenBudget:
    """Soft warning and hard cutoff thresholds on cumulative trace tokens."""

    soft_warn: int = 2000
    hard_cutoff: int = 4000

    def __post_init__(self) -> None:
        if not 0 < self.soft_warn < self.hard_cutoff:
            raise ValueError(
                f"require 0 < soft_warn < hard_cutoff, got {self.soft_warn}/{self.hard_cutoff}"
            )


@dataclass(frozen=True)
class ModelParams:
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")


#: The four routable tools.
STANDARD_TOOLS = ("caption", "code", "ocr", "vqa")


@dataclass(frozen=True)
class AgentConfig:
    """Feature flags and limits for one agent condition.

    ``enabled_tools`` must be a subset of the registry's registered tools at
    run time; ablation conditions are expressed by shrinking this set and/or
    clearing ``backtrace_enabled``.
    """

    enabled_tools: frozenset[str] = frozenset(STANDARD_TOOLS)
    backtrace_enabled: bool = True
    verify_enabled: bool = True
    max_backtracks: int = 3
    budget: TokenBudget = TokenBudget()
    reasoning_mode: str = "qwq"
    model_params: ModelParams = ModelParams()

    def __post_init__(self) -> None:
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be >= 0")


@dataclass
class ReasoningTrace:
    item_id: str
    steps: list[ReasoningStep] = field(default_factory=list)
    total_tokens: int = 0
    status: RunStatus = RunStatus.ERROR
    backtracks: list[BacktrackEvent] = field(default_factory=list)
    wall_time_ms: int = 0

    def final_answer_step(self) -> ReasoningStep | None:
        for step in self.steps:
            if step.kind is StepKind.FINAL_ANSWER:
                return step
        return None

    def active_steps(self) -> list[ReasoningStep]:
        return [s for s in self.steps if not s.discarded]

    def tool_names_used(self) -> frozenset[str]:
        return frozenset(s.tool_name for s in self.steps if s.tool_name)

    def validate(self, budget: TokenBudget | None = None, max_backtracks: int | None = None) -> None:
        """Raise ``ValueError`` if any trace invariant is violated."""
        for i, step in enumerate(self.steps):
            if step.index != i:
                raise ValueError(f"step indices not contiguous at position {i}")
        if self.total_tokens != sum(s.token_count for s in self.steps):
            raise ValueError("total_tokens does not equal sum of step token counts")
        finals = [s for s in self.steps if s.kind is StepKind.FINAL_ANSWER]
        if len(finals) > 1:
            raise ValueError("more than one final-answer step")
        if finals and finals[0] is not self.steps[-1]:
            raise ValueError("final-answer step is not last")
        self._validate_pairing()
        if budget is not None:
            truncated = self.total_tokens >= budget.hard_cutoff and not finals
            if truncated != (self.status is RunStatus.UNFINISHED):
                raise ValueError(
                    f"status {self.status.value} inconsistent with tokens={self.total_tokens}, "
                    f"cutoff={budget.hard_cutoff}, final={bool(finals)}"
                )
        if max_backtracks is not None and len(self.backtracks) > max_backtracks:
            raise ValueError("more backtrack events than max_backtracks")
        for event in self.backtracks:
            if not 0 <= event.from_step < len(self.steps):
                raise ValueError("backtrack from_step out of range")

    def _validate_pairing(self) -> None:
        # Tool calls and results must alternate, adjacent, with matching names.
        pending: ReasoningStep | None = None
        for step in self.steps:
            if step.kind is StepKind.TOOL_CALL:
                if pending is not None:
                    raise ValueError(f"orphan tool call at step {pending.index}")
                pending = step
            elif step.kind is StepKind.TOOL_RESULT:
                if pending is None:
                    raise ValueError(f"tool result without call at step {step.index}")
                if step.tool_name != pending.tool_name:
                    raise ValueError(
                        f"tool result name {step.tool_name!r} does not match call "
                        f"{pending.tool_name!r}"
                    )
                if step.index != pending.index + 1:
                    raise ValueError("tool result not adjacent to its call")
                pending = None
            elif pending is not None:
                raise ValueError(f"step {step.index} interleaves an open tool call")
        if pending is not None:
            raise ValueError(f"unresolved tool call at step {pending.index}")


@dataclass
class RunRecord:
    """Outcome of one agent run over one item; immutable by convention after creation."""

    item_id: str
    dataset: str
    difficulty: Difficulty
    seed: int
    config_fingerprint: str
    predicted: str
    correct: bool
    trace: ReasoningTrace
    tokens_approximate: bool = False
    error: str | None = None

    @property
    def status(self) -> RunStatus:
        return self.trace.status

    @property
    def total_tokens(self) -> int:
        return self.trace.total_tokens


@dataclass
class RunLog:
    """All records for one (dataset, seed) pass under one configuration."""

    dataset: str
    seed: int
    records: list[RunRecord] = field(default_factory=list)
    config_fingerprint: str = ""

    def __post_init__(self) -> None:
        ids = [r.item_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate item ids in run log for {self.dataset}/{self.seed}")

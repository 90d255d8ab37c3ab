"""Stepwise reasoning loop with checkpoints, backtracking, and token budgets.

One ``AgentLoop`` runs one benchmark item to completion: it prompts the
model, parses the next action, dispatches tool calls, snapshots the
conversation at restore points, rolls back when a tool observation
contradicts prior reasoning, and stops on a final answer, the hard token
cutoff, or a transport failure. Runs are deterministic given a scripted
model, scripted tools, a fixed seed, and an injected clock.

Loop policies (none dictated by the task definition, all documented here):

* The soft-budget brevity warning is injected once, as a persistent user
  turn, the first time the warning zone is entered.
* A model output that would push the total past the hard cutoff ends the
  run immediately; if it was not a final answer it is recorded as a thought
  step (tokens spent are spent) so call/result pairing stays intact.
* Three consecutive malformed outputs, or three consecutive failed tool
  dispatches, abort with status ``error`` to bound cost on broken backends.
* Checkpoints are taken after every second consecutive thought and after
  every tool exchange that survives verification.
* Verification runs only when both backtracking and verification are
  enabled; a repeated identical tool call returning a different payload
  triggers a backtrack without consulting the model.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .actions import (
    FinalAnswer,
    Thought,
    ToolCall,
    canonical_call,
    extract_answer,
    parse_action,
    prediction_matches,
)
from .model import (
    AuthError,
    ChatTurn,
    ModelClient,
    ModelTransportError,
    Role,
    count_tokens_fallback,
)
from .tools import ToolCallRecord, ToolRegistry, dispatch, render_tool_prompt
from .types import (
    AgentConfig,
    BacktrackEvent,
    BenchmarkItem,
    ReasoningStep,
    ReasoningTrace,
    RunRecord,
    RunStatus,
    StepKind,
    TokenBudget,
)

logger = logging.getLogger(__name__)

MAX_CONSECUTIVE_MALFORMED = 3
MAX_CONSECUTIVE_TOOL_FAILURES = 3
CHECKPOINT_THOUGHT_INTERVAL = 2


class BudgetDecision(Enum):
    CONTINUE = "continue"
    WARN = "warn"
    TRUNCATE = "truncate"


class MalformedActionError(Exception):
    """Raised internally after too many consecutive unparseable outputs."""


class BacktrackLimitExceeded(Exception):
    """The backtrack budget is spent; the agent proceeds forward instead."""


@dataclass(frozen=True)
class Checkpoint:
    checkpoint_id: int
    step_index: int
    conversation_snapshot: tuple[ChatTurn, ...]


@dataclass(frozen=True)
class Verdict:
    consistent: bool
    reason: str = ""


SYSTEM_TEMPLATE = """\
You are a careful visual-reasoning assistant. Solve the question about the \
attached image step by step. On each turn do exactly one of the following:
- write one short reasoning step as plain text;
- request a tool on a single line: TOOL: <name> <json-args>
- finish on a single line: FINAL ANSWER: <answer>
{tool_block}For multiple-choice questions answer with the choice label alone. \
Keep steps brief.
Reasoning mode: {reasoning_mode}.
"""

VERIFIER_SYSTEM_PROMPT = (
    "You check reasoning chains for consistency with tool observations. "
    "Reply with exactly CONSISTENT, or INCONSISTENT: <short reason>."
)

BUDGET_WARNING_TEXT = (
    "Note: the token budget is nearly exhausted. Be brief and give your "
    "FINAL ANSWER within the next couple of turns."
)

#: How much surrounding context the bounded self-check query sees.
_VERIFY_CONTEXT_STEPS = 6
_VERIFY_SNIPPET_CHARS = 300


def budget_decision(total_tokens: int, budget: TokenBudget) -> BudgetDecision:
    if total_tokens >= budget.hard_cutoff:
        return BudgetDecision.TRUNCATE
    if total_tokens >= budget.soft_warn:
        return BudgetDecision.WARN
    return BudgetDecision.CONTINUE


def enforce_budget(trace: ReasoningTrace, budget: TokenBudget) -> BudgetDecision:
    """Budget state of a trace: truncate at the hard cutoff, warn above the
    soft threshold (the warning becomes a brevity instruction in the next
    prompt), continue otherwise."""
    return budget_decision(trace.total_tokens, budget)


def system_turn(config: AgentConfig, registry: ToolRegistry) -> ChatTurn:
    tool_block = render_tool_prompt(registry, config)
    if tool_block:
        tool_block += "\n"
    content = SYSTEM_TEMPLATE.format(tool_block=tool_block, reasoning_mode=config.reasoning_mode)
    return ChatTurn(Role.SYSTEM, content)


def item_turn(item: BenchmarkItem) -> ChatTurn:
    lines = [item.question]
    if item.choices:
        lines.append("Choices:")
        lines.extend(f"{label}. {text}" for label, text in item.choices)
    return ChatTurn(Role.USER, "\n".join(lines), image=item.image_ref)


def backtrack_marker_turn(reason: str) -> ChatTurn:
    return ChatTurn(
        Role.USER,
        f"[backtrack] {reason} Resume from this earlier state and try a different approach.",
    )


class AgentLoop:
    """State machine for a single item run; not reusable across items.

    ``conversation`` and ``checkpoints`` stay inspectable after ``run()``
    so tests can byte-compare restored contexts against snapshots.
    """

    def __init__(
        self,
        item: BenchmarkItem,
        config: AgentConfig,
        model: ModelClient,
        tools: ToolRegistry,
        *,
        clock: Callable[[], float] | None = None,
        config_fingerprint: str = "",
    ) -> None:
        missing = config.enabled_tools - tools.registered_names()
        if missing:
            raise ValueError(f"enabled tools not registered: {sorted(missing)}")
        self.item = item
        self.config = config
        self.model = model
        self.registry = tools.with_enabled(config.enabled_tools)
        self._clock = clock if clock is not None else time.monotonic
        self._fingerprint = config_fingerprint

        self.conversation: list[ChatTurn] = [system_turn(config, self.registry), item_turn(item)]
        self.steps: list[ReasoningStep] = []
        self.checkpoints: list[Checkpoint] = []
        self.backtracks: list[BacktrackEvent] = []
        self.tokens_approximate = False

        self._checkpoint_counter = 0
        self._consecutive_thoughts = 0
        self._malformed_streak = 0
        self._tool_failure_streak = 0
        self._warned = False
        # canonical call -> (payload, call step index), active exchanges only
        self._seen_results: dict[str, tuple[str, int]] = {}

    # -- public ---------------------------------------------------------

    def run(self) -> RunRecord:
        started = self._clock()
        status, predicted, error = self._run_loop()
        wall_time_ms = int((self._clock() - started) * 1000)
        trace = ReasoningTrace(
            item_id=self.item.id,
            steps=self.steps,
            total_tokens=sum(step.token_count for step in self.steps),
            status=status,
            backtracks=self.backtracks,
            wall_time_ms=wall_time_ms,
        )
        trace.validate(self.config.budget, self.config.max_backtracks)
        correct = status is RunStatus.COMPLETED and prediction_matches(self.item, predicted)
        return RunRecord(
            item_id=self.item.id,
            dataset=self.item.dataset,
            difficulty=self.item.difficulty,
            seed=self.config.model_params.seed,
            config_fingerprint=self._fingerprint,
            predicted=predicted,
            correct=correct,
            trace=trace,
            tokens_approximate=self.tokens_approximate,
            error=error,
        )

    # -- main loop ------------------------------------------------------

    def _run_loop(self) -> tuple[RunStatus, str, str | None]:
        budget = self.config.budget
        while True:
            decision = budget_decision(self._total_tokens(), budget)
            if decision is BudgetDecision.TRUNCATE:
                return RunStatus.UNFINISHED, "", None
            if self._malformed_streak >= MAX_CONSECUTIVE_MALFORMED:
                reason = f"{MAX_CONSECUTIVE_MALFORMED} consecutive unparseable model outputs"
                logger.warning("item %s: %s", self.item.id, reason)
                return RunStatus.ERROR, "", reason
            if self._tool_failure_streak >= MAX_CONSECUTIVE_TOOL_FAILURES:
                reason = f"{MAX_CONSECUTIVE_TOOL_FAILURES} consecutive failed tool dispatches"
                logger.warning("item %s: %s", self.item.id, reason)
                return RunStatus.ERROR, "", reason
            if decision is BudgetDecision.WARN and not self._warned:
                self.conversation.append(ChatTurn(Role.USER, BUDGET_WARNING_TEXT))
                self._warned = True

            try:
                result = self.model.complete(list(self.conversation), self.config.model_params)
            except (ModelTransportError, AuthError) as exc:
                logger.warning("item %s: model call failed: %s", self.item.id, exc)
                return RunStatus.ERROR, "", f"model call failed: {exc}"

            tokens = result.completion_tokens
            if tokens is None:
                tokens = count_tokens_fallback(result.text)
                self.tokens_approximate = True
            action = parse_action(result.text)

            if isinstance(action, FinalAnswer):
                self._append_step(StepKind.FINAL_ANSWER, action.text, tokens)
                self.conversation.append(ChatTurn(Role.ASSISTANT, result.text))
                return RunStatus.COMPLETED, extract_answer(action.text, self.item), None

            if self._total_tokens() + tokens >= budget.hard_cutoff:
                # The call that crossed the cutoff was not an answer: stop now,
                # keeping its cost on the books without opening a tool exchange.
                self._append_step(StepKind.THOUGHT, result.text, tokens)
                self.conversation.append(ChatTurn(Role.ASSISTANT, result.text))
                return RunStatus.UNFINISHED, "", None

            if isinstance(action, Thought):
                self._handle_thought(action, result.text, tokens)
            else:
                self._handle_tool_call(action, result.text, tokens)

    def _handle_thought(self, action: Thought, raw_text: str, tokens: int) -> None:
        self._append_step(StepKind.THOUGHT, raw_text, tokens)
        self.conversation.append(ChatTurn(Role.ASSISTANT, raw_text))
        if action.malformed:
            self._malformed_streak += 1
            self._consecutive_thoughts = 0
            return
        self._malformed_streak = 0
        self._consecutive_thoughts += 1
        if self._consecutive_thoughts % CHECKPOINT_THOUGHT_INTERVAL == 0:
            self._take_checkpoint()

    def _handle_tool_call(self, action: ToolCall, raw_text: str, tokens: int) -> None:
        self._consecutive_thoughts = 0
        if action.name not in self.config.enabled_tools:
            # Never materializes as a tool step: keeps trace tool names within
            # the enabled set. The model is told and the streak policy applies.
            self._append_step(StepKind.THOUGHT, raw_text, tokens)
            self.conversation.append(ChatTurn(Role.ASSISTANT, raw_text))
            self.conversation.append(
                ChatTurn(Role.USER, f"Tool '{action.name}' is not available. Use only the listed tools.")
            )
            self._malformed_streak += 1
            return
        self._malformed_streak = 0
        call_step = self._append_step(StepKind.TOOL_CALL, raw_text, tokens, tool_name=action.name)
        self.conversation.append(ChatTurn(Role.ASSISTANT, raw_text))

        record = dispatch(
            ToolCallRecord(action.name, action.args, call_step.index),
            self.item.image_ref,
            self.registry,
        )
        self._append_step(
            StepKind.TOOL_RESULT, record.payload, record.token_cost, tool_name=action.name
        )
        self.conversation.append(
            ChatTurn(Role.TOOL, f"TOOL RESULT ({action.name}):\n{record.payload}")
        )
        if not record.success:
            self._tool_failure_streak += 1
            return
        self._tool_failure_streak = 0

        verdict: Verdict | None = None
        if self.config.backtrace_enabled:
            verdict = self._check_repeat_disagreement(action, record.payload, call_step.index)
            if verdict is None and self.config.verify_enabled:
                verdict = self._verify(action.name, record.payload)
        if verdict is not None and not verdict.consistent:
            try:
                self.backtrack(verdict.reason, anchor_step=call_step.index)
                return
            except BacktrackLimitExceeded:
                logger.info("item %s: backtrack limit reached, proceeding forward", self.item.id)
        self._take_checkpoint()

    # -- verification and backtracking -----------------------------------

    def _check_repeat_disagreement(
        self, action: ToolCall, payload: str, call_index: int
    ) -> Verdict | None:
        key = canonical_call(action.name, action.args)
        seen = self._seen_results.get(key)
        if seen is not None and seen[0] != payload:
            return Verdict(
                consistent=False,
                reason=f"Two results for the same call disagree: {action.name} "
                f"returned different outputs on repeat.",
            )
        self._seen_results[key] = (payload, call_index)
        return None

    def _verify(self, tool_name: str, payload: str) -> Verdict:
        """One bounded self-check: does the latest observation contradict the
        reasoning so far? Model failures are treated as consistent (fail-open)."""
        recent = [
            f"[{s.kind.value}] {s.text[:_VERIFY_SNIPPET_CHARS]}"
            for s in self.steps
            if not s.discarded
        ][-_VERIFY_CONTEXT_STEPS:]
        prompt = (
            f"Question: {self.item.question[:_VERIFY_SNIPPET_CHARS]}\n"
            "Recent reasoning:\n" + "\n".join(recent) + "\n"
            f"Latest tool observation ({tool_name}): {payload[:_VERIFY_SNIPPET_CHARS]}\n"
            "Does the latest tool observation contradict the prior reasoning?"
        )
        turns = [ChatTurn(Role.SYSTEM, VERIFIER_SYSTEM_PROMPT), ChatTurn(Role.USER, prompt)]
        try:
            result = self.model.complete(turns, self.config.model_params)
        except (ModelTransportError, AuthError) as exc:
            logger.warning("item %s: verification call failed (fail-open): %s", self.item.id, exc)
            return Verdict(consistent=True)
        tokens = result.completion_tokens
        if tokens is None:
            tokens = count_tokens_fallback(result.text)
            self.tokens_approximate = True
        self._append_step(StepKind.VERIFICATION, result.text, tokens)
        text = result.text.strip()
        if text.upper().startswith("INCONSISTENT"):
            reason = text.partition(":")[2].strip() or text
            return Verdict(consistent=False, reason=reason)
        return Verdict(consistent=True)

    def take_checkpoint(self) -> Checkpoint:
        return self._take_checkpoint()

    def _take_checkpoint(self) -> Checkpoint:
        self._checkpoint_counter += 1
        checkpoint = Checkpoint(
            checkpoint_id=self._checkpoint_counter,
            step_index=self.steps[-1].index if self.steps else -1,
            conversation_snapshot=tuple(self.conversation),
        )
        self.checkpoints.append(checkpoint)
        return checkpoint

    def backtrack(self, reason: str, *, anchor_step: int | None = None) -> None:
        """Restore the conversation to the last checkpoint preceding
        ``anchor_step`` and append a single marker.

        Discarded steps stay in the trace, flagged, and their tokens stay
        counted. Raises ``BacktrackLimitExceeded`` once ``max_backtracks``
        events exist; with no eligible checkpoint the trigger is logged and
        skipped (nothing to restore to).
        """
        if not self.config.backtrace_enabled:
            raise BacktrackLimitExceeded("backtracking is disabled")
        if len(self.backtracks) >= self.config.max_backtracks:
            raise BacktrackLimitExceeded(
                f"backtrack budget of {self.config.max_backtracks} is spent"
            )
        if anchor_step is None:
            anchor_step = self.steps[-1].index if self.steps else 0
        target: Checkpoint | None = None
        for checkpoint in reversed(self.checkpoints):
            if checkpoint.step_index < anchor_step:
                target = checkpoint
                break
        if target is None:
            logger.info("item %s: no checkpoint precedes step %d", self.item.id, anchor_step)
            return
        from_step = self.steps[-1].index
        for step in self.steps:
            if step.index > target.step_index:
                step.discarded = True
        self.checkpoints = [c for c in self.checkpoints if c.step_index <= target.step_index]
        self._seen_results = {
            key: value for key, value in self._seen_results.items() if value[1] <= target.step_index
        }
        self.conversation = list(target.conversation_snapshot)
        self.conversation.append(backtrack_marker_turn(reason))
        self._append_step(StepKind.BACKTRACK_MARKER, reason, 0)
        self.backtracks.append(
            BacktrackEvent(from_step=from_step, to_checkpoint=target.checkpoint_id, reason=reason)
        )
        self._consecutive_thoughts = 0
        if self.conversation[:-1] != list(target.conversation_snapshot):
            raise RuntimeError("backtrack restored context does not match snapshot")

    def verify_step(self, tool_name: str, payload: str) -> Verdict:
        return self._verify(tool_name, payload)

    # -- helpers ----------------------------------------------------------

    def _total_tokens(self) -> int:
        return sum(step.token_count for step in self.steps)

    def _append_step(
        self, kind: StepKind, text: str, token_count: int, tool_name: str | None = None
    ) -> ReasoningStep:
        step = ReasoningStep(
            index=len(self.steps),
            kind=kind,
            text=text,
            token_count=token_count,
            tool_name=tool_name,
        )
        self.steps.append(step)
        return step


def run_item(
    item: BenchmarkItem,
    config: AgentConfig,
    model: ModelClient,
    tools: ToolRegistry,
    *,
    clock: Callable[[], float] | None = None,
    config_fingerprint: str = "",
) -> RunRecord:
    """Run one item through the reasoning loop and return its record.

    Transport and repeated-parse failures end the run with status ``error``
    rather than raising; the caller always gets a record.
    """
    loop = AgentLoop(
        item, config, model, tools, clock=clock, config_fingerprint=config_fingerprint
    )
    return loop.run()

from __future__ import annotations

import json

import pytest

from visagent import (
    AgentConfig,
    AgentLoop,
    BacktrackLimitExceeded,
    BudgetDecision,
    ModelParams,
    ModelTransportError,
    ReasoningTrace,
    RunStatus,
    ScriptedModelClient,
    ScriptedToolBackend,
    StepKind,
    TokenBudget,
    ToolRegistry,
    enforce_budget,
    run_item,
)
from visagent.agent import VERIFIER_SYSTEM_PROMPT, BUDGET_WARNING_TEXT, backtrack_marker_turn
from visagent.runlog import record_line

from conftest import counter_clock, make_item, make_registry

OCR_LINE = 'TOOL: ocr {"region": "full"}'


def run(script, *, config=None, registry=None, item=None, model_cls=ScriptedModelClient):
    item = item or make_item()
    config = config or AgentConfig()
    registry = registry or make_registry(responses={'ocr {"region":"full"}': "k=120"})
    model = model_cls(script)
    loop = AgentLoop(item, config, model, registry, clock=counter_clock())
    return loop.run(), loop, model


class TestEnforceBudget:
    def test_boundaries(self):
        budget = TokenBudget(soft_warn=2000, hard_cutoff=4000)

        def decision(total):
            trace = ReasoningTrace(item_id="x", total_tokens=total)
            trace.steps = []
            trace.total_tokens = total
            return enforce_budget(trace, budget)

        assert decision(0) is BudgetDecision.CONTINUE
        assert decision(1999) is BudgetDecision.CONTINUE
        assert decision(2000) is BudgetDecision.WARN
        assert decision(3999) is BudgetDecision.WARN
        assert decision(4000) is BudgetDecision.TRUNCATE

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            TokenBudget(soft_warn=0, hard_cutoff=10)
        with pytest.raises(ValueError):
            TokenBudget(soft_warn=10, hard_cutoff=10)


class TestImmediateAnswer:
    def test_completes_on_turn_one(self):
        record, loop, model = run([("FINAL ANSWER: B", 12)])
        assert record.status is RunStatus.COMPLETED
        assert record.predicted == "B"
        assert record.correct
        assert record.total_tokens == 12
        assert [s.kind for s in record.trace.steps] == [StepKind.FINAL_ANSWER]
        assert model.calls == 1


class TestBudgetTruncation:
    def test_900_token_turns_truncate_at_4000(self):
        script = [(f"still thinking, pass {i}", 900) for i in range(5)]
        record, loop, model = run(script)
        assert record.status is RunStatus.UNFINISHED
        assert record.total_tokens == 4500
        assert not record.correct
        assert record.predicted == ""
        assert model.calls == 5

    def test_budget_safety_overshoot_bound(self):
        script = [(f"pass {i}", 900) for i in range(6)]
        config = AgentConfig(model_params=ModelParams(max_tokens=1024))
        record, _, _ = run(script, config=config)
        assert record.total_tokens < config.budget.hard_cutoff + config.model_params.max_tokens

    def test_final_answer_on_overshooting_turn_still_completes(self):
        config = AgentConfig(budget=TokenBudget(soft_warn=100, hard_cutoff=200))
        record, _, _ = run([("filler", 150), ("FINAL ANSWER: B", 100)], config=config)
        assert record.status is RunStatus.COMPLETED
        assert record.total_tokens == 250
        assert record.correct

    def test_warning_injected_once(self):
        config = AgentConfig(budget=TokenBudget(soft_warn=100, hard_cutoff=1000))
        script = [("a", 150), ("b", 150), ("c", 150), ("FINAL ANSWER: B", 10)]
        record, loop, _ = run(script, config=config)
        warnings = [t for t in loop.conversation if t.content == BUDGET_WARNING_TEXT]
        assert len(warnings) == 1


class TestToolExchange:
    def test_single_ocr_pair_adjacent(self):
        script = [
            "Let me read the chart values.",
            OCR_LINE,
            "CONSISTENT",
            "The OCR shows k=120, so the answer is B.",
            "FINAL ANSWER: B",
        ]
        record, loop, model = run(script)
        kinds = [s.kind for s in record.trace.steps]
        assert kinds == [
            StepKind.THOUGHT,
            StepKind.TOOL_CALL,
            StepKind.TOOL_RESULT,
            StepKind.VERIFICATION,
            StepKind.THOUGHT,
            StepKind.FINAL_ANSWER,
        ]
        call, result = record.trace.steps[1], record.trace.steps[2]
        assert call.tool_name == result.tool_name == "ocr"
        assert result.index == call.index + 1
        assert result.text == "k=120"
        assert record.status is RunStatus.COMPLETED

    def test_tool_failure_payload_feeds_back_and_run_continues(self):
        registry = make_registry(responses={}, default=None)
        script = [OCR_LINE, "FINAL ANSWER: B"]
        record, loop, _ = run(script, registry=registry)
        assert record.status is RunStatus.COMPLETED
        result = record.trace.steps[1]
        assert result.kind is StepKind.TOOL_RESULT and result.text.startswith("ERROR:")

    def test_three_consecutive_tool_failures_abort(self):
        registry = make_registry(responses={}, default=None)
        record, _, model = run([OCR_LINE] * 3, registry=registry)
        assert record.status is RunStatus.ERROR
        assert "failed tool dispatches" in record.error
        assert model.calls == 3


class TestMalformedPolicy:
    def test_three_consecutive_malformed_abort(self):
        record, _, _ = run(["TOOL: ocr {bad", "TOOL: ocr {bad", "TOOL: ocr {bad"])
        assert record.status is RunStatus.ERROR
        assert "unparseable" in record.error

    def test_streak_resets_on_clean_output(self):
        script = ["TOOL: ocr {bad", "a clean thought", "TOOL: ocr {bad", "TOOL: ocr {bad",
                  "FINAL ANSWER: B"]
        record, _, _ = run(script)
        assert record.status is RunStatus.COMPLETED

    def test_unknown_tool_counts_toward_streak(self):
        config = AgentConfig(enabled_tools=frozenset({"ocr"}))
        script = ['TOOL: vqa {"question": "?"}'] * 3
        record, loop, _ = run(script, config=config)
        assert record.status is RunStatus.ERROR
        assert record.trace.tool_names_used() == frozenset()
        assert any("not available" in t.content for t in loop.conversation)


class TestTransportFailures:
    def test_exhausted_script_yields_error_record(self):
        record, _, _ = run(["just a thought"])
        assert record.status is RunStatus.ERROR
        assert "model call failed" in record.error


BACKTRACK_SCRIPT = [
    "Reading the axes first.",
    "The trend looks linear.",
    OCR_LINE,
    "INCONSISTENT: OCR value conflicts with earlier reading",
    "FINAL ANSWER: B",
]


class TestBacktracking:
    def test_single_verification_failure_backtracks_once(self):
        record, loop, model = run(BACKTRACK_SCRIPT)
        assert record.status is RunStatus.COMPLETED
        assert len(record.trace.backtracks) == 1
        event = record.trace.backtracks[0]
        assert event.reason == "OCR value conflicts with earlier reading"
        assert event.to_checkpoint == 1
        assert event.from_step == 4
        kinds = [(s.kind, s.discarded) for s in record.trace.steps]
        assert kinds == [
            (StepKind.THOUGHT, False),
            (StepKind.THOUGHT, False),
            (StepKind.TOOL_CALL, True),
            (StepKind.TOOL_RESULT, True),
            (StepKind.VERIFICATION, True),
            (StepKind.BACKTRACK_MARKER, False),
            (StepKind.FINAL_ANSWER, False),
        ]

    def test_restored_context_equals_snapshot_plus_marker(self):
        record, loop, _ = run(BACKTRACK_SCRIPT)
        checkpoint = loop.checkpoints[0]
        assert checkpoint.step_index == 1
        reason = record.trace.backtracks[0].reason
        expected = list(checkpoint.conversation_snapshot) + [backtrack_marker_turn(reason)]
        prefix = loop.conversation[: len(expected)]
        assert prefix == expected
        expected_bytes = json.dumps([[t.role.value, t.content, t.image] for t in expected])
        prefix_bytes = json.dumps([[t.role.value, t.content, t.image] for t in prefix])
        assert prefix_bytes == expected_bytes

    def test_discarded_tokens_still_counted(self):
        record, _, _ = run(BACKTRACK_SCRIPT)
        assert record.total_tokens == sum(s.token_count for s in record.trace.steps)
        assert any(s.discarded and s.token_count > 0 for s in record.trace.steps)

    def test_max_backtracks_zero_yields_no_events(self):
        config = AgentConfig(max_backtracks=0)
        record, _, model = run(BACKTRACK_SCRIPT, config=config)
        assert record.status is RunStatus.COMPLETED
        assert record.trace.backtracks == []
        assert model.calls == 5

    def test_backtrace_disabled_never_verifies(self):
        config = AgentConfig(backtrace_enabled=False)
        script = ["t1", "t2", OCR_LINE, "FINAL ANSWER: B"]
        record, _, model = run(script, config=config)
        assert record.status is RunStatus.COMPLETED
        assert record.trace.backtracks == []
        assert not any(s.kind is StepKind.VERIFICATION for s in record.trace.steps)
        assert model.calls == 4

    def test_limit_exceeded_raised_directly(self):
        record, loop, _ = run(["t1", "t2", "FINAL ANSWER: B"], config=AgentConfig(max_backtracks=0))
        with pytest.raises(BacktrackLimitExceeded):
            loop.backtrack("any reason")

    def test_repeat_call_disagreement_triggers_backtrack_without_verifier(self):
        counter = iter(range(10))

        def flaky(name, args, image_ref):
            return f"k={120 + 10 * next(counter)}"

        backend = ScriptedToolBackend(fn=flaky)
        registry = ToolRegistry.build({name: backend for name in ("caption", "code", "ocr", "vqa")})
        script = [
            "t1",
            "t2",
            OCR_LINE,
            "CONSISTENT",
            "rechecking the reading",
            OCR_LINE,
            "FINAL ANSWER: B",
        ]
        record, _, model = run(script, registry=registry)
        assert record.status is RunStatus.COMPLETED
        assert len(record.trace.backtracks) == 1
        assert "disagree" in record.trace.backtracks[0].reason
        assert model.calls == 7  # second exchange consumed no verifier turn

    def test_verifier_failure_is_fail_open(self):
        class VerifierDownClient(ScriptedModelClient):
            def complete(self, turns, params):
                if turns[0].content == VERIFIER_SYSTEM_PROMPT:
                    raise ModelTransportError("verifier endpoint down")
                return super().complete(turns, params)

        record, _, _ = run([OCR_LINE, "FINAL ANSWER: B"], model_cls=VerifierDownClient)
        assert record.status is RunStatus.COMPLETED
        assert record.trace.backtracks == []
        assert not any(s.kind is StepKind.VERIFICATION for s in record.trace.steps)


class TestToolGating:
    def test_trace_tools_subset_of_enabled_and_prompts_clean(self):
        config = AgentConfig(enabled_tools=frozenset({"ocr"}))
        script = ["t1", "t2", OCR_LINE, "CONSISTENT", "FINAL ANSWER: B"]
        record, loop, model = run(script, config=config)
        assert record.trace.tool_names_used() <= config.enabled_tools
        for prompt in model.prompts:
            text = "\n".join(turn.content for turn in prompt)
            for name in ("caption", "code", "vqa"):
                assert f"- {name}:" not in text

    def test_enabled_tools_must_be_registered(self):
        config = AgentConfig(enabled_tools=frozenset({"laser"}))
        with pytest.raises(ValueError):
            run(["FINAL ANSWER: B"], config=config)


class TestDeterminism:
    def test_repeated_runs_byte_identical(self):
        def once():
            record, _, _ = run(BACKTRACK_SCRIPT)
            return record_line(record)

        assert once() == once()

    def test_trace_invariants_validated(self):
        record, _, _ = run(BACKTRACK_SCRIPT)
        record.trace.validate(AgentConfig().budget, AgentConfig().max_backtracks)


class TestRunItemFunction:
    def test_wrapper_matches_loop(self):
        item = make_item()
        registry = make_registry()
        model = ScriptedModelClient(["FINAL ANSWER: B"])
        record = run_item(item, AgentConfig(), model, registry, clock=counter_clock())
        assert record.status is RunStatus.COMPLETED
        assert record.item_id == item.id

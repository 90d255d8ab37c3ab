"""Line-oriented action grammar for model outputs, plus answer extraction.

The agent asks the model to act through two directives, each on its own line:

    TOOL: <name> {"arg": value, ...}
    FINAL ANSWER: <text>

Anything else is a plain reasoning step. Unparseable directives degrade to a
``Thought`` flagged ``malformed``; the agent loop aborts a run after three
consecutive malformed outputs.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .types import BenchmarkItem

TOOL_PREFIX = "TOOL:"
FINAL_PREFIX = "FINAL ANSWER:"

_NAME_RE = re.compile(r"[a-z][a-z0-9_]*\Z")
_NUMBER_RE = re.compile(r"[-+]?\d[\d,]*(?:\.\d+)?(?:[eE][-+]?\d+)?")


@dataclass(frozen=True)
class Thought:
    text: str
    malformed: bool = False


@dataclass(frozen=True)
class ToolCall:
    name: str
    args: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FinalAnswer:
    text: str


Action = Thought | ToolCall | FinalAnswer


def canonical_call(name: str, args: dict | object) -> str:
    """Stable one-line form of a tool call, used as the key for scripted
    backends and for detecting repeated calls that disagree."""
    return f"{name} {json.dumps(dict(args), sort_keys=True, separators=(',', ':'))}"


def parse_action(model_output: str) -> Action:
    """Parse one model completion into its action.

    Deterministic: the first directive line (in line order) decides. A
    ``FINAL ANSWER:`` line captures everything after the prefix through the
    end of the output, so multi-line answers survive.
    """
    if not model_output.strip():
        return Thought(model_output, malformed=True)
    offset = 0
    for line in model_output.splitlines(keepends=True):
        stripped = line.strip()
        if stripped.startswith(FINAL_PREFIX):
            start = model_output.index(FINAL_PREFIX, offset) + len(FINAL_PREFIX)
            return FinalAnswer(model_output[start:].strip())
        if stripped.startswith(TOOL_PREFIX):
            call = _parse_tool_line(stripped)
            if call is None:
                return Thought(model_output, malformed=True)
            return call
        offset += len(line)
    return Thought(model_output)


def _parse_tool_line(line: str) -> ToolCall | None:
    rest = line[len(TOOL_PREFIX):].strip()
    name, _, arg_text = rest.partition(" ")
    if not _NAME_RE.match(name):
        return None
    arg_text = arg_text.strip()
    if not arg_text:
        return ToolCall(name, {})
    try:
        args = json.loads(arg_text)
    except json.JSONDecodeError:
        return None
    if not isinstance(args, dict):
        return None
    return ToolCall(name, args)


def extract_answer(final_text: str, item: BenchmarkItem) -> str:
    """Pull the scored prediction out of a final-answer text.

    Multiple-choice items take the first standalone choice label
    (case-insensitive), normalized to the canonical label; free-form items
    take the first parseable number with commas stripped. Returns ``""``
    when nothing extractable remains (scored incorrect).
    """
    text = final_text.strip()
    if not text:
        return ""
    if item.choices:
        labels = [label for label, _ in item.choices]
        pattern = "|".join(re.escape(x) for x in sorted(labels, key=len, reverse=True))
        match = re.search(rf"(?<![A-Za-z0-9])(?:{pattern})(?![A-Za-z0-9])", text, re.IGNORECASE)
        if not match:
            return ""
        hit = match.group(0)
        for label in labels:
            if label.casefold() == hit.casefold():
                return label
        return ""
    match = _NUMBER_RE.search(text)
    if not match:
        return ""
    return _normalize_number(match.group(0))


def _normalize_number(raw: str) -> str:
    cleaned = raw.replace(",", "")
    try:
        return str(int(cleaned))
    except ValueError:
        pass
    try:
        value = float(cleaned)
    except ValueError:
        return ""
    if value.is_integer():
        return str(int(value))
    return repr(value)


def prediction_matches(item: BenchmarkItem, predicted: str) -> bool:
    """Compare a prediction against the gold answer under the extraction conventions."""
    if not predicted:
        return False
    if item.choices:
        return predicted.casefold() == item.gold_answer.casefold()
    gold_match = _NUMBER_RE.search(item.gold_answer)
    if gold_match:
        return predicted == _normalize_number(gold_match.group(0))
    return predicted.strip().casefold() == item.gold_answer.strip().casefold()

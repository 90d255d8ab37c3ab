"""JSONL persistence for run records.

One JSON object per record, one per line. Stable field names:
``item_id, status, total_tokens, predicted, correct, steps[], backtracks[],
config_fingerprint, seed`` plus ``dataset``, ``difficulty``,
``wall_time_ms``, ``tokens_approximate`` and ``error`` so logs are
self-describing for the analysis commands. Keys are sorted on write, so
identical records serialize to identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

from .types import (
    BacktrackEvent,
    Difficulty,
    ReasoningStep,
    ReasoningTrace,
    RunLog,
    RunRecord,
    RunStatus,
    StepKind,
)


def record_to_dict(record: RunRecord) -> dict:
    return {
        "item_id": record.item_id,
        "dataset": record.dataset,
        "difficulty": record.difficulty.value,
        "seed": record.seed,
        "config_fingerprint": record.config_fingerprint,
        "status": record.status.value,
        "total_tokens": record.total_tokens,
        "predicted": record.predicted,
        "correct": record.correct,
        "wall_time_ms": record.trace.wall_time_ms,
        "tokens_approximate": record.tokens_approximate,
        "error": record.error,
        "steps": [
            {
                "index": s.index,
                "kind": s.kind.value,
                "text": s.text,
                "token_count": s.token_count,
                "tool_name": s.tool_name,
                "discarded": s.discarded,
            }
            for s in record.trace.steps
        ],
        "backtracks": [
            {"from_step": b.from_step, "to_checkpoint": b.to_checkpoint, "reason": b.reason}
            for b in record.trace.backtracks
        ],
    }


def record_from_dict(row: dict) -> RunRecord:
    trace = ReasoningTrace(
        item_id=row["item_id"],
        steps=[
            ReasoningStep(
                index=s["index"],
                kind=StepKind(s["kind"]),
                text=s["text"],
                token_count=s["token_count"],
                tool_name=s.get("tool_name"),
                discarded=s.get("discarded", False),
            )
            for s in row.get("steps", [])
        ],
        total_tokens=row["total_tokens"],
        status=RunStatus(row["status"]),
        backtracks=[
            BacktrackEvent(
                from_step=b["from_step"],
                to_checkpoint=b["to_checkpoint"],
                reason=b["reason"],
            )
            for b in row.get("backtracks", [])
        ],
        wall_time_ms=row.get("wall_time_ms", 0),
    )
    return RunRecord(
        item_id=row["item_id"],
        dataset=row.get("dataset", ""),
        difficulty=Difficulty(row.get("difficulty", Difficulty.UNKNOWN.value)),
        seed=row.get("seed", 0),
        config_fingerprint=row.get("config_fingerprint", ""),
        predicted=row.get("predicted", ""),
        correct=row.get("correct", False),
        trace=trace,
        tokens_approximate=row.get("tokens_approximate", False),
        error=row.get("error"),
    )


def record_line(record: RunRecord) -> str:
    return json.dumps(record_to_dict(record), sort_keys=True, separators=(",", ":"))


def write_records(path: str | Path, records: Iterable[RunRecord]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(record_line(record) + "\n")


def write_runlogs(path: str | Path, logs: Sequence[RunLog]) -> None:
    write_records(path, (record for log in logs for record in log.records))


def read_records(path: str | Path) -> list[RunRecord]:
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(record_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: bad record: {exc}") from exc
    return records


def group_records(records: Sequence[RunRecord]) -> list[RunLog]:
    """Group loose records into logs keyed by (dataset, seed, fingerprint)."""
    grouped: dict[tuple[str, int, str], list[RunRecord]] = {}
    for record in records:
        key = (record.dataset, record.seed, record.config_fingerprint)
        grouped.setdefault(key, []).append(record)
    logs = []
    for (dataset, seed, fingerprint), group in sorted(grouped.items()):
        logs.append(
            RunLog(
                dataset=dataset,
                seed=seed,
                records=sorted(group, key=lambda r: r.item_id),
                config_fingerprint=fingerprint,
            )
        )
    return logs


def read_runlogs(path: str | Path) -> list[RunLog]:
    return group_records(read_records(path))

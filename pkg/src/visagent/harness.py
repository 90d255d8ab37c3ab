"""Dataset loading, benchmark execution, scoring, bootstrap CIs, ablations.

The harness runs the agent over items across seeds with bounded
parallelism, scores answers, and computes percentile-bootstrap confidence
intervals by resampling items with replacement (item-level resampling:
with only a handful of seeds, seed-level resampling would be degenerate).
Per-item failures become error records and never abort a run; error
records are excluded from accuracy numerators and denominators alike and
reported separately.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .agent import run_item
from .model import ModelClient
from .tools import ToolRegistry
from .types import (
    AgentConfig,
    BenchmarkItem,
    Difficulty,
    ReasoningTrace,
    RunLog,
    RunRecord,
    RunStatus,
)

#: Tool names plus the backtracking switch: everything an ablation can disable.
ABLATABLE = frozenset({"ocr", "code", "caption", "vqa", "backtrace"})


class SchemaError(Exception):
    """A dataset line violates the JSONL schema; the message names the line."""


class EmptyLogError(Exception):
    """Accuracy is undefined: no scoreable records."""


class AblationGatingError(Exception):
    """A trace used a tool that its ablation condition disabled."""


@dataclass(frozen=True)
class AccuracySummary:
    mean_accuracy: float
    ci_low: float
    ci_high: float
    n_items: int
    n_seeds: int
    n_resamples: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.ci_low <= self.mean_accuracy <= self.ci_high <= 1.0:
            raise ValueError(
                f"require 0 <= ci_low <= mean <= ci_high <= 1, got "
                f"{self.ci_low}/{self.mean_accuracy}/{self.ci_high}"
            )


@dataclass(frozen=True)
class AblationConfig:
    label: str
    disabled: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        unknown = set(self.disabled) - ABLATABLE
        if unknown:
            raise ValueError(f"cannot disable unknown modules: {sorted(unknown)}")

    def apply(self, base: AgentConfig) -> AgentConfig:
        return replace(
            base,
            enabled_tools=frozenset(base.enabled_tools - self.disabled),
            backtrace_enabled=base.backtrace_enabled and "backtrace" not in self.disabled,
        )


def load_dataset(path: str | Path) -> list[BenchmarkItem]:
    """Load benchmark items from JSONL.

    Line schema: ``{"id","dataset","question","image","choices","answer",
    "difficulty"}`` where ``choices`` is ``[[label, text], ...]`` or null.
    Duplicate ids, gold labels missing from the choices, and malformed lines
    all raise ``SchemaError`` naming the offending line.
    """
    path = Path(path)
    items: list[BenchmarkItem] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            try:
                item = _item_from_row(row)
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{line_no}: {exc}") from exc
            if item.id in seen:
                raise SchemaError(f"{path}:{line_no}: duplicate item id {item.id!r}")
            seen.add(item.id)
            items.append(item)
    return items


def _item_from_row(row: Mapping) -> BenchmarkItem:
    choices = row.get("choices")
    if choices is not None:
        choices = tuple((str(label), str(text)) for label, text in choices)
    difficulty_raw = row.get("difficulty") or Difficulty.UNKNOWN.value
    try:
        difficulty = Difficulty(difficulty_raw)
    except ValueError as exc:
        raise ValueError(f"unknown difficulty {difficulty_raw!r}") from exc
    return BenchmarkItem(
        id=str(row["id"]),
        dataset=str(row["dataset"]),
        question=str(row["question"]),
        image_ref=str(row["image"]),
        choices=choices,
        gold_answer=str(row["answer"]),
        difficulty=difficulty,
    )


def config_fingerprint(config: AgentConfig, registry: ToolRegistry) -> str:
    """Stable hash of the agent configuration plus tool endpoints.

    The per-run model seed is deliberately excluded so the logs of one
    multi-seed run share a fingerprint; the seed is recorded on each log.
    """
    payload = {
        "enabled_tools": sorted(config.enabled_tools),
        "backtrace_enabled": config.backtrace_enabled,
        "verify_enabled": config.verify_enabled,
        "max_backtracks": config.max_backtracks,
        "budget": {"soft_warn": config.budget.soft_warn, "hard_cutoff": config.budget.hard_cutoff},
        "reasoning_mode": config.reasoning_mode,
        "model_params": {
            "temperature": config.model_params.temperature,
            "max_tokens": config.model_params.max_tokens,
        },
        "tools": registry.describe(),
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


ModelFactory = Callable[[BenchmarkItem, int], ModelClient]
ClockFactory = Callable[[], Callable[[], float]]


def run_benchmark(
    items: Sequence[BenchmarkItem],
    config: AgentConfig,
    seeds: Sequence[int],
    *,
    model_factory: ModelFactory,
    registry: ToolRegistry,
    parallelism: int = 1,
    clock_factory: ClockFactory | None = None,
) -> list[RunLog]:
    """Run every item under every seed; one log per (seed, dataset).

    ``model_factory(item, seed)`` must return a fresh client per item so
    scripted queues and sessions are never shared across pool workers.
    Records are sorted by item id, which makes results independent of the
    worker-pool size.
    """
    if not seeds:
        raise ValueError("seeds must be non-empty")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    logs: list[RunLog] = []
    for seed in seeds:
        seeded = replace(config, model_params=replace(config.model_params, seed=seed))
        fingerprint = config_fingerprint(seeded, registry)

        def run_one(item: BenchmarkItem) -> RunRecord:
            try:
                clock = clock_factory() if clock_factory is not None else time.monotonic
                model = model_factory(item, seed)
                return run_item(
                    item, seeded, model, registry, clock=clock, config_fingerprint=fingerprint
                )
            except Exception as exc:  # contained: one bad item never kills the run
                return _error_record(item, seed, fingerprint, f"harness failure: {exc}")

        if parallelism == 1:
            records = [run_one(item) for item in items]
        else:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                records = list(pool.map(run_one, items))
        by_dataset: dict[str, list[RunRecord]] = {}
        for record in records:
            by_dataset.setdefault(record.dataset, []).append(record)
        for dataset in sorted(by_dataset):
            logs.append(
                RunLog(
                    dataset=dataset,
                    seed=seed,
                    records=sorted(by_dataset[dataset], key=lambda r: r.item_id),
                    config_fingerprint=fingerprint,
                )
            )
    return logs


def _error_record(item: BenchmarkItem, seed: int, fingerprint: str, reason: str) -> RunRecord:
    return RunRecord(
        item_id=item.id,
        dataset=item.dataset,
        difficulty=item.difficulty,
        seed=seed,
        config_fingerprint=fingerprint,
        predicted="",
        correct=False,
        trace=ReasoningTrace(item_id=item.id, status=RunStatus.ERROR),
        error=reason,
    )


def score(log: RunLog) -> float:
    """Fraction of scoreable records answered correctly.

    Unfinished and empty-prediction records count as incorrect; error
    records are excluded from numerator and denominator. With nothing
    scoreable, accuracy is undefined and ``EmptyLogError`` is raised.
    """
    scoreable = [r for r in log.records if r.status is not RunStatus.ERROR]
    if not scoreable:
        raise EmptyLogError(f"no scoreable records in {log.dataset}/seed={log.seed}")
    return sum(1 for r in scoreable if r.correct) / len(scoreable)


def bootstrap_ci(
    log_set: Sequence[RunLog],
    n_resamples: int = 10000,
    level: float = 0.95,
    rng_seed: int = 0,
) -> AccuracySummary:
    """Percentile-method bootstrap CI over item-level resampling.

    Per-item correctness is averaged across seeds first, then items are
    resampled with replacement. Items whose every seed run errored are
    dropped (they carry no signal). Deterministic for a given ``rng_seed``;
    the resample stream does not depend on ``level``, so widening the level
    can only widen the interval.
    """
    if not log_set:
        raise EmptyLogError("no logs given")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    id_sets = [{r.item_id for r in log.records} for log in log_set]
    if any(ids != id_sets[0] for ids in id_sets[1:]):
        raise ValueError("logs do not cover the same item set")
    per_item: dict[str, list[float]] = {}
    for log in log_set:
        for record in log.records:
            if record.status is RunStatus.ERROR:
                continue
            per_item.setdefault(record.item_id, []).append(1.0 if record.correct else 0.0)
    if not per_item:
        raise EmptyLogError("all records have error status")
    values = np.array([float(np.mean(per_item[k])) for k in sorted(per_item)])
    mean = float(values.mean())
    n = len(values)
    rng = np.random.default_rng(rng_seed)
    stats = np.empty(n_resamples)
    chunk = max(1, min(n_resamples, 1_000_000 // max(n, 1)))
    done = 0
    while done < n_resamples:
        size = min(chunk, n_resamples - done)
        idx = rng.integers(0, n, size=(size, n))
        stats[done : done + size] = values[idx].mean(axis=1)
        done += size
    alpha = (1.0 - level) / 2.0
    ci_low = float(np.percentile(stats, 100.0 * alpha))
    ci_high = float(np.percentile(stats, 100.0 * (1.0 - alpha)))
    # Guard the mean-in-interval invariant against degenerate resample sets.
    ci_low = min(ci_low, mean)
    ci_high = max(ci_high, mean)
    return AccuracySummary(
        mean_accuracy=mean,
        ci_low=ci_low,
        ci_high=ci_high,
        n_items=n,
        n_seeds=len(log_set),
        n_resamples=n_resamples,
    )


@dataclass(frozen=True)
class AblationTable:
    """Accuracy summaries per (condition, dataset), rows in grid order."""

    labels: tuple[str, ...]
    datasets: tuple[str, ...]
    cells: Mapping[tuple[str, str], AccuracySummary]

    def cell(self, label: str, dataset: str) -> AccuracySummary:
        return self.cells[(label, dataset)]

    def cell_text(self, label: str, dataset: str) -> str:
        return f"{100.0 * self.cell(label, dataset).mean_accuracy:.1f}"

    def render(self) -> str:
        header = ["Dataset"] + list(self.labels)
        rows = [header]
        for dataset in self.datasets:
            rows.append([dataset] + [self.cell_text(label, dataset) for label in self.labels])
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "kind": "ablation_table",
            "labels": list(self.labels),
            "datasets": list(self.datasets),
            "cells": {
                f"{label}::{dataset}": {
                    "mean_accuracy": s.mean_accuracy,
                    "ci_low": s.ci_low,
                    "ci_high": s.ci_high,
                    "n_items": s.n_items,
                    "n_seeds": s.n_seeds,
                    "n_resamples": s.n_resamples,
                }
                for (label, dataset), s in self.cells.items()
            },
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "AblationTable":
        cells = {}
        for key, s in payload["cells"].items():
            label, _, dataset = key.partition("::")
            cells[(label, dataset)] = AccuracySummary(**s)
        return cls(
            labels=tuple(payload["labels"]),
            datasets=tuple(payload["datasets"]),
            cells=cells,
        )


def ablation_table_from_logs(
    logs_by_label: Mapping[str, Sequence[RunLog]],
    labels: Sequence[str],
    *,
    n_resamples: int = 10000,
    rng_seed: int = 0,
) -> AblationTable:
    """Summarize per-condition logs into the ablation table."""
    datasets: list[str] = []
    cells: dict[tuple[str, str], AccuracySummary] = {}
    for label in labels:
        by_dataset: dict[str, list[RunLog]] = {}
        for log in logs_by_label[label]:
            by_dataset.setdefault(log.dataset, []).append(log)
        for dataset in sorted(by_dataset):
            if dataset not in datasets:
                datasets.append(dataset)
            cells[(label, dataset)] = bootstrap_ci(
                by_dataset[dataset], n_resamples=n_resamples, rng_seed=rng_seed
            )
    return AblationTable(labels=tuple(labels), datasets=tuple(sorted(datasets)), cells=cells)


def run_ablation(
    items: Sequence[BenchmarkItem],
    base_config: AgentConfig,
    grid: Sequence[AblationConfig],
    seeds: Sequence[int],
    *,
    model_factory: ModelFactory,
    registry: ToolRegistry,
    parallelism: int = 1,
    n_resamples: int = 10000,
    rng_seed: int = 0,
    clock_factory: ClockFactory | None = None,
) -> tuple[AblationTable, dict[str, list[RunLog]]]:
    """Run the benchmark once per grid condition and tabulate the results.

    After each condition the traces are machine-checked: a disabled tool
    appearing anywhere in a trace raises ``AblationGatingError``. Returns
    the table and the per-condition logs (for persistence).
    """
    labels = [ab.label for ab in grid]
    if len(set(labels)) != len(labels):
        raise ValueError("ablation labels must be unique")
    if not grid:
        return AblationTable(labels=(), datasets=(), cells={}), {}
    logs_by_label: dict[str, list[RunLog]] = {}
    for ab in grid:
        condition = ab.apply(base_config)
        logs = run_benchmark(
            items,
            condition,
            seeds,
            model_factory=model_factory,
            registry=registry,
            parallelism=parallelism,
            clock_factory=clock_factory,
        )
        for log in logs:
            for record in log.records:
                used = record.trace.tool_names_used() & ab.disabled
                if used:
                    raise AblationGatingError(
                        f"condition {ab.label!r}: trace for {record.item_id} used "
                        f"disabled tools {sorted(used)}"
                    )
        logs_by_label[ab.label] = logs
    table = ablation_table_from_logs(
        logs_by_label, labels, n_resamples=n_resamples, rng_seed=rng_seed
    )
    return table, logs_by_label

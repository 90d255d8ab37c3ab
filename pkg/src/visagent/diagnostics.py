"""Run-log analytics: token buckets, histograms, error categories, comparisons.

All functions here are pure over immutable logs and deterministic, so the
same log and parameters always serialize to byte-identical reports.

Records with status ``error`` are infrastructure failures, not model
failures: they are kept out of every accuracy denominator and out of the
correct/incorrect/unfinished tallies, and reported separately as
``n_error`` so report totals still reconcile with record counts.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

from .model import ChatTurn, ModelClient, Role
from .types import ModelParams, RunLog, RunRecord, RunStatus, StepKind

logger = logging.getLogger(__name__)

DEFAULT_BUCKET_WIDTH = 250

ERROR_CATEGORIES = ("OCR", "Spatial", "Math", "Other")


class DatasetMismatchError(Exception):
    """Two reports being compared do not cover the same datasets."""


@dataclass(frozen=True)
class TokenBucketStats:
    """Counts over one half-open token range [lo, hi).

    ``accuracy_ratio`` treats unfinished runs as incorrect and is absent
    (``None``) for empty buckets rather than a fake zero.
    """

    lo: int
    hi: int
    n_correct: int
    n_incorrect: int
    n_unfinished: int
    accuracy_ratio: float | None

    @property
    def total(self) -> int:
        return self.n_correct + self.n_incorrect + self.n_unfinished


@dataclass(frozen=True)
class ErrorCategoryDist:
    fractions: Mapping[str, float]
    n_analyzed: int


def _records(log: RunLog | Sequence[RunRecord]) -> list[RunRecord]:
    if hasattr(log, "records"):
        return list(log.records)
    return list(log)


def _countable(records: Iterable[RunRecord]) -> list[RunRecord]:
    return [r for r in records if r.status is not RunStatus.ERROR]


def bucket_by_tokens(log: RunLog | Sequence[RunRecord], width: int) -> list[TokenBucketStats]:
    """Tally correct/incorrect/unfinished cases per token range.

    Buckets partition [0, max_tokens] contiguously with the given width;
    every non-error record lands in exactly one bucket. An empty log yields
    an empty list.
    """
    if width <= 0:
        raise ValueError("bucket width must be > 0")
    records = _countable(_records(log))
    if not records:
        return []
    n_buckets = max(r.total_tokens for r in records) // width + 1
    correct = [0] * n_buckets
    incorrect = [0] * n_buckets
    unfinished = [0] * n_buckets
    for record in records:
        i = record.total_tokens // width
        if record.status is RunStatus.UNFINISHED:
            unfinished[i] += 1
        elif record.correct:
            correct[i] += 1
        else:
            incorrect[i] += 1
    stats = []
    for i in range(n_buckets):
        total = correct[i] + incorrect[i] + unfinished[i]
        stats.append(
            TokenBucketStats(
                lo=i * width,
                hi=(i + 1) * width,
                n_correct=correct[i],
                n_incorrect=incorrect[i],
                n_unfinished=unfinished[i],
                accuracy_ratio=correct[i] / total if total else None,
            )
        )
    return stats


def token_histograms(
    log: RunLog | Sequence[RunRecord],
    by: str = "correctness",
    *,
    width: int = DEFAULT_BUCKET_WIDTH,
    exclude_unfinished: bool = False,
) -> dict[str, list[tuple[int, int]]]:
    """Token-count histograms partitioned by correctness or difficulty.

    Correctness classes are disjoint: ``correct``, ``incorrect`` (completed
    but wrong), ``unfinished``. The ``exclude_unfinished`` variant drops
    unfinished runs entirely before counting. Histograms are lists of
    ``(bucket_lo, count)`` pairs, zero-filled over the common range.
    """
    if width <= 0:
        raise ValueError("bucket width must be > 0")
    if by not in ("correctness", "difficulty"):
        raise ValueError(f"unsupported grouping {by!r}")
    records = _countable(_records(log))
    if exclude_unfinished:
        records = [r for r in records if r.status is not RunStatus.UNFINISHED]

    if by == "correctness":
        classes = ["correct", "incorrect"] + ([] if exclude_unfinished else ["unfinished"])

        def class_of(record: RunRecord) -> str:
            if record.status is RunStatus.UNFINISHED:
                return "unfinished"
            return "correct" if record.correct else "incorrect"

    else:
        classes = ["Easy", "Medium", "Hard", "Unknown"]

        def class_of(record: RunRecord) -> str:
            return record.difficulty.value

    n_buckets = (max(r.total_tokens for r in records) // width + 1) if records else 0
    counts = {name: [0] * n_buckets for name in classes}
    for record in records:
        counts[class_of(record)][record.total_tokens // width] += 1
    return {
        name: [(i * width, c) for i, c in enumerate(buckets)]
        for name, buckets in counts.items()
    }


class ErrorClassifier(Protocol):
    def categorize(self, record: RunRecord) -> str: ...


_QUANTITY_RE = re.compile(r"([A-Za-z][A-Za-z_]*)\s*(?:=|:|is)\s*(-?\d+(?:\.\d+)?)")
_SPATIAL_TERMS = (
    "left",
    "right",
    "above",
    "below",
    "beneath",
    "top",
    "bottom",
    "adjacent",
    "overlap",
    "overlapping",
    "between",
    "inside",
    "outside",
    "upper",
    "lower",
    "corner",
    "nearest",
    "farthest",
    "north",
    "south",
    "east",
    "west",
)
_SPATIAL_RE = re.compile(r"\b(?:" + "|".join(_SPATIAL_TERMS) + r")\b", re.IGNORECASE)
_REASONING_KINDS = (StepKind.THOUGHT, StepKind.VERIFICATION, StepKind.BACKTRACK_MARKER)


class RuleBasedClassifier:
    """Deterministic trace-content matcher for the error taxonomy.

    Rules, checked in order (first hit wins):

    * OCR — an ``ocr`` tool observation states a quantity that a later
      reasoning step restates with a different value, or a verification or
      backtrack step blames an OCR reading.
    * Spatial — a reasoning step uses spatial-relation terms.
    * Math — a ``code`` exchange failed (error payload or traceback).
    * Other — everything else.

    The original taxonomy was applied by hand; this automation is a
    documented approximation of it.
    """

    def categorize(self, record: RunRecord) -> str:
        steps = record.trace.steps
        if self._ocr_conflict(steps):
            return "OCR"
        if any(
            s.kind in _REASONING_KINDS and _SPATIAL_RE.search(s.text) for s in steps
        ):
            return "Spatial"
        if any(
            s.kind is StepKind.TOOL_RESULT
            and s.tool_name == "code"
            and (s.text.startswith("ERROR:") or "Traceback" in s.text)
            for s in steps
        ):
            return "Math"
        return "Other"

    @staticmethod
    def _ocr_conflict(steps) -> bool:
        readings: dict[str, str] = {}
        for step in steps:
            if step.kind is StepKind.TOOL_RESULT and step.tool_name == "ocr":
                for name, value in _QUANTITY_RE.findall(step.text):
                    readings[name.casefold()] = value
            elif step.kind in _REASONING_KINDS and readings:
                for name, value in _QUANTITY_RE.findall(step.text):
                    seen = readings.get(name.casefold())
                    if seen is not None and float(seen) != float(value):
                        return True
        for step in steps:
            if step.kind in (StepKind.VERIFICATION, StepKind.BACKTRACK_MARKER) and re.search(
                r"\bocr\b", step.text, re.IGNORECASE
            ):
                return True
        return False


MODEL_JUDGE_RUBRIC = (
    "Classify the dominant failure in this reasoning trace as exactly one of "
    "OCR (misread text/numbers from the image), Spatial (wrong spatial "
    "relations), Math (wrong computation), or Other. Reply with "
    "'CATEGORY: <name>' only."
)


class ModelJudgeClassifier:
    """Sends the trace plus a rubric to a model; falls back to Other."""

    def __init__(self, client: ModelClient, params: ModelParams | None = None) -> None:
        self._client = client
        self._params = params or ModelParams(temperature=0.0, max_tokens=16)

    def categorize(self, record: RunRecord) -> str:
        rendered = "\n".join(
            f"[{s.kind.value}] {s.text[:200]}" for s in record.trace.steps[:40]
        )
        turns = [
            ChatTurn(Role.SYSTEM, MODEL_JUDGE_RUBRIC),
            ChatTurn(Role.USER, rendered or "(empty trace)"),
        ]
        result = self._client.complete(turns, self._params)
        match = re.search(r"CATEGORY:\s*(\w+)", result.text, re.IGNORECASE)
        if match:
            name = match.group(1).capitalize()
            if name.upper() == "OCR":
                return "OCR"
            if name in ERROR_CATEGORIES:
                return name
        raise ValueError(f"unparseable judge reply: {result.text[:80]!r}")


def categorize_errors(
    log: RunLog | Sequence[RunRecord], classifier: ErrorClassifier
) -> ErrorCategoryDist:
    """Distribute the incorrect (non-error) records over the error taxonomy.

    A classifier failure on a record counts it as Other and is logged, so
    the fractions always sum to one over ``n_analyzed`` analyzed records.
    """
    incorrect = [r for r in _countable(_records(log)) if not r.correct]
    counts = {name: 0 for name in ERROR_CATEGORIES}
    for record in incorrect:
        try:
            category = classifier.categorize(record)
            if category not in counts:
                raise ValueError(f"unknown category {category!r}")
        except Exception as exc:
            logger.warning("classifier failed on %s: %s", record.item_id, exc)
            category = "Other"
        counts[category] += 1
    n = len(incorrect)
    fractions = {name: (counts[name] / n if n else 0.0) for name in ERROR_CATEGORIES}
    return ErrorCategoryDist(fractions=fractions, n_analyzed=n)


@dataclass(frozen=True)
class DatasetDiagnostics:
    n_records: int
    n_error: int
    buckets: list[TokenBucketStats]
    histograms: dict[str, dict[str, list[tuple[int, int]]]]
    error_categories: ErrorCategoryDist
    summary: dict


@dataclass(frozen=True)
class DiagnosticsReport:
    per_dataset: dict[str, DatasetDiagnostics]
    metadata: dict

    def to_dict(self) -> dict:
        return {
            "kind": "diagnostics_report",
            "metadata": self.metadata,
            "datasets": {
                name: {
                    "n_records": d.n_records,
                    "n_error": d.n_error,
                    "buckets": [
                        {
                            "lo": b.lo,
                            "hi": b.hi,
                            "n_correct": b.n_correct,
                            "n_incorrect": b.n_incorrect,
                            "n_unfinished": b.n_unfinished,
                            "accuracy_ratio": b.accuracy_ratio,
                        }
                        for b in d.buckets
                    ],
                    "histograms": {
                        group: {cls: [list(pair) for pair in series] for cls, series in hists.items()}
                        for group, hists in d.histograms.items()
                    },
                    "error_categories": {
                        "fractions": dict(d.error_categories.fractions),
                        "n_analyzed": d.error_categories.n_analyzed,
                    },
                    "summary": d.summary,
                }
                for name, d in sorted(self.per_dataset.items())
            },
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DiagnosticsReport":
        per_dataset = {}
        for name, d in payload.get("datasets", {}).items():
            per_dataset[name] = DatasetDiagnostics(
                n_records=d["n_records"],
                n_error=d["n_error"],
                buckets=[
                    TokenBucketStats(
                        lo=b["lo"],
                        hi=b["hi"],
                        n_correct=b["n_correct"],
                        n_incorrect=b["n_incorrect"],
                        n_unfinished=b["n_unfinished"],
                        accuracy_ratio=b["accuracy_ratio"],
                    )
                    for b in d["buckets"]
                ],
                histograms={
                    group: {cls: [tuple(pair) for pair in series] for cls, series in hists.items()}
                    for group, hists in d["histograms"].items()
                },
                error_categories=ErrorCategoryDist(
                    fractions=d["error_categories"]["fractions"],
                    n_analyzed=d["error_categories"]["n_analyzed"],
                ),
                summary=d["summary"],
            )
        return cls(per_dataset=per_dataset, metadata=payload.get("metadata", {}))


def build_report(
    logs: Sequence[RunLog],
    bucket_width: int = DEFAULT_BUCKET_WIDTH,
    classifier: ErrorClassifier | None = None,
) -> DiagnosticsReport:
    """Aggregate run logs into the full diagnostics document.

    Per dataset: bucket stats, token histograms (including the
    exclude-unfinished variant and the difficulty split), the error-category
    distribution, and a summary whose counts reconcile with the record
    totals. Deterministic for a given input.
    """
    if bucket_width <= 0:
        raise ValueError("bucket width must be > 0")
    classifier = classifier or RuleBasedClassifier()
    by_dataset: dict[str, list[RunRecord]] = {}
    for log in logs:
        by_dataset.setdefault(log.dataset, []).extend(log.records)
    per_dataset = {}
    for dataset, records in sorted(by_dataset.items()):
        countable = _countable(records)
        n_error = len(records) - len(countable)
        n_correct = sum(1 for r in countable if r.correct)
        n_unfinished = sum(1 for r in countable if r.status is RunStatus.UNFINISHED)
        n_incorrect = len(countable) - n_correct - n_unfinished
        per_dataset[dataset] = DatasetDiagnostics(
            n_records=len(records),
            n_error=n_error,
            buckets=bucket_by_tokens(records, bucket_width),
            histograms={
                "correctness": token_histograms(records, "correctness", width=bucket_width),
                "correctness_excl_unfinished": token_histograms(
                    records, "correctness", width=bucket_width, exclude_unfinished=True
                ),
                "difficulty": token_histograms(records, "difficulty", width=bucket_width),
            },
            error_categories=categorize_errors(records, classifier),
            summary={
                "accuracy": n_correct / len(countable) if countable else None,
                "n_correct": n_correct,
                "n_incorrect": n_incorrect,
                "n_unfinished": n_unfinished,
                "n_scoreable": len(countable),
            },
        )
    metadata = {
        "bucket_width": bucket_width,
        "config_fingerprints": sorted({log.config_fingerprint for log in logs}),
        "seeds": sorted({log.seed for log in logs}),
    }
    return DiagnosticsReport(per_dataset=per_dataset, metadata=metadata)


def compare_conditions(a: DiagnosticsReport, b: DiagnosticsReport) -> dict:
    """Signed per-category and per-bucket deltas between two reports (b - a).

    Raises ``DatasetMismatchError`` unless both reports cover the same
    datasets.
    """
    if set(a.per_dataset) != set(b.per_dataset):
        raise DatasetMismatchError(
            f"datasets differ: {sorted(a.per_dataset)} vs {sorted(b.per_dataset)}"
        )
    deltas = {}
    for dataset in sorted(a.per_dataset):
        da, db = a.per_dataset[dataset], b.per_dataset[dataset]
        category_deltas = {
            name: db.error_categories.fractions.get(name, 0.0)
            - da.error_categories.fractions.get(name, 0.0)
            for name in ERROR_CATEGORIES
        }
        buckets_a = {bucket.lo: bucket.accuracy_ratio for bucket in da.buckets}
        buckets_b = {bucket.lo: bucket.accuracy_ratio for bucket in db.buckets}
        bucket_deltas = {}
        for lo in sorted(set(buckets_a) | set(buckets_b)):
            ra, rb = buckets_a.get(lo), buckets_b.get(lo)
            bucket_deltas[lo] = (rb - ra) if (ra is not None and rb is not None) else None
        acc_a = da.summary.get("accuracy")
        acc_b = db.summary.get("accuracy")
        deltas[dataset] = {
            "error_categories": category_deltas,
            "bucket_accuracy": bucket_deltas,
            "accuracy": (acc_b - acc_a) if (acc_a is not None and acc_b is not None) else None,
        }
    return {"kind": "condition_delta", "datasets": deltas}

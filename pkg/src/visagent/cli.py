"""Command-line interface: run benchmarks, run ablations, analyze, report.

Exit codes: 0 success, 1 usage error (bad arguments or paths, refusing to
overwrite without --force), 2 runtime failure. Diagnostics go to stderr;
data goes to the named output files or stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import charts
from .config import ConfigError, load_run_config
from .diagnostics import DiagnosticsReport, build_report
from .harness import (
    AblationGatingError,
    EmptyLogError,
    SchemaError,
    load_dataset,
    run_ablation,
    run_benchmark,
)
from .runlog import read_records, group_records, write_runlogs
from .types import RunStatus


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit code 1, not argparse's 2
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="visagent", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the agent over a dataset")
    run.add_argument("--dataset", required=True)
    run.add_argument("--config", required=True)
    run.add_argument("--seeds", default=None, help="comma-separated, overrides config")
    run.add_argument("--out", required=True)
    run.add_argument("--parallelism", type=int, default=None)
    run.add_argument("--force", action="store_true")
    run.add_argument("--debug-wire", action="store_true")

    ablate = sub.add_parser("ablate", help="run the ablation grid")
    ablate.add_argument("--dataset", required=True)
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--grid", default=None, help="JSON file, overrides config grid")
    ablate.add_argument("--seeds", default=None)
    ablate.add_argument("--out", required=True, help="ablation table JSON")
    ablate.add_argument("--logs-out", default=None, help="optional JSONL of all condition logs")
    ablate.add_argument("--resamples", type=int, default=10000)
    ablate.add_argument("--parallelism", type=int, default=None)
    ablate.add_argument("--force", action="store_true")
    ablate.add_argument("--debug-wire", action="store_true")

    analyze = sub.add_parser("analyze", help="build a diagnostics report from run logs")
    analyze.add_argument("logs", nargs="+")
    analyze.add_argument("--bucket-width", type=int, default=250)
    analyze.add_argument("--out", default=None, help="report JSON (stdout when omitted)")
    analyze.add_argument("--force", action="store_true")

    report = sub.add_parser("report", help="render an analysis as json, csv, or svg")
    report.add_argument("--analysis", required=True, help="diagnostics or ablation JSON")
    report.add_argument("--format", choices=("json", "csv", "svg"), default="json")
    report.add_argument("--out", default=None, help="directory for csv/svg, file for json")
    report.add_argument("--force", action="store_true")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if getattr(args, "debug_wire", False):
        logging.basicConfig(stream=sys.stderr, level=logging.DEBUG)
        logging.getLogger("visagent.wire").setLevel(logging.DEBUG)
    try:
        handler = {
            "run": _cmd_run,
            "ablate": _cmd_ablate,
            "analyze": _cmd_analyze,
            "report": _cmd_report,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, SchemaError, EmptyLogError, AblationGatingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


def _require_input(path_text: str, kind: str) -> Path:
    path = Path(path_text)
    if not path.exists():
        raise UsageError(f"{kind} not found: {path}")
    return path


def _check_out(path_text: str, force: bool) -> Path:
    path = Path(path_text)
    if path.exists() and not force:
        raise UsageError(f"refusing to overwrite {path} without --force")
    if path.parent and not path.parent.exists():
        raise UsageError(f"output directory does not exist: {path.parent}")
    return path


def _parse_seeds(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --seeds value {text!r}: {exc}") from exc


def _cmd_run(args) -> int:
    dataset_path = _require_input(args.dataset, "dataset")
    config_path = _require_input(args.config, "config")
    out = _check_out(args.out, args.force)
    setup = load_run_config(config_path, debug_wire=args.debug_wire)
    items = load_dataset(dataset_path)
    seeds = _parse_seeds(args.seeds) or setup.seeds
    parallelism = args.parallelism or setup.parallelism
    logs = run_benchmark(
        items,
        setup.agent_config,
        seeds,
        model_factory=setup.model_factory,
        registry=setup.registry,
        parallelism=parallelism,
        clock_factory=setup.clock_factory,
    )
    write_runlogs(out, logs)
    n_records = sum(len(log.records) for log in logs)
    n_errors = sum(
        1 for log in logs for r in log.records if r.status is RunStatus.ERROR
    )
    print(
        f"wrote {n_records} records ({len(logs)} logs, {n_errors} errors) to {out}",
        file=sys.stderr,
    )
    return 0


def _cmd_ablate(args) -> int:
    dataset_path = _require_input(args.dataset, "dataset")
    config_path = _require_input(args.config, "config")
    out = _check_out(args.out, args.force)
    logs_out = _check_out(args.logs_out, args.force) if args.logs_out else None
    setup = load_run_config(config_path, debug_wire=args.debug_wire)
    grid = setup.ablation_grid
    if args.grid:
        from .harness import AblationConfig

        grid_payload = json.loads(_require_input(args.grid, "grid").read_text())
        grid = [
            AblationConfig(label=str(g["label"]), disabled=frozenset(g.get("disabled", [])))
            for g in grid_payload
        ]
    if not grid:
        raise UsageError("no ablation grid in config and no --grid given")
    items = load_dataset(dataset_path)
    seeds = _parse_seeds(args.seeds) or setup.seeds
    table, logs_by_label = run_ablation(
        items,
        setup.agent_config,
        grid,
        seeds,
        model_factory=setup.model_factory,
        registry=setup.registry,
        parallelism=args.parallelism or setup.parallelism,
        n_resamples=args.resamples,
        clock_factory=setup.clock_factory,
    )
    out.write_text(json.dumps(table.to_dict(), sort_keys=True, indent=2) + "\n")
    if logs_out is not None:
        all_logs = [log for label in table.labels for log in logs_by_label[label]]
        write_runlogs(logs_out, all_logs)
    print(table.render(), file=sys.stderr)
    print(f"wrote ablation table to {out}", file=sys.stderr)
    return 0


def _cmd_analyze(args) -> int:
    records = []
    for path_text in args.logs:
        records.extend(read_records(_require_input(path_text, "log")))
    if args.bucket_width <= 0:
        raise UsageError("--bucket-width must be > 0")
    report = build_report(group_records(records), bucket_width=args.bucket_width)
    text = json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if args.out:
        out = _check_out(args.out, args.force)
        out.write_text(text)
        print(f"wrote report to {out}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_report(args) -> int:
    analysis_path = _require_input(args.analysis, "analysis")
    payload = json.loads(analysis_path.read_text())
    kind = payload.get("kind")
    if kind == "diagnostics_report":
        return _render_diagnostics(payload, args)
    if kind == "ablation_table":
        return _render_ablation(payload, args)
    raise UsageError(f"unrecognized analysis kind {kind!r} in {analysis_path}")


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out DIR is required for csv/svg output")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_output(path: Path, text: str, force: bool) -> None:
    if path.exists() and not force:
        raise UsageError(f"refusing to overwrite {path} without --force")
    path.write_text(text)


def _render_diagnostics(payload: dict, args) -> int:
    report = DiagnosticsReport.from_dict(payload)  # validates shape
    if args.format == "json":
        text = json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
        if args.out:
            _write_output(Path(args.out), text, args.force)
        else:
            sys.stdout.write(text)
        return 0
    out = _out_dir(args)
    for dataset, data in sorted(payload["datasets"].items()):
        if args.format == "csv":
            _write_output(out / f"{dataset}_bucket_stats.csv", _buckets_csv(data), args.force)
            _write_output(
                out / f"{dataset}_token_histogram.csv", _histogram_csv(data), args.force
            )
            _write_output(
                out / f"{dataset}_error_categories.csv", _errors_csv(data), args.force
            )
        else:
            hists = data["histograms"]["correctness"]
            _write_output(
                out / f"{dataset}_token_histogram.svg",
                charts.histogram_svg(
                    {name: [tuple(p) for p in series] for name, series in hists.items()},
                    f"{dataset}: token counts by outcome",
                ),
                args.force,
            )
            _write_output(
                out / f"{dataset}_accuracy_curve.svg",
                charts.accuracy_curve_svg(
                    data["buckets"], f"{dataset}: cases and accuracy by token range"
                ),
                args.force,
            )
    print(f"wrote {args.format} report files to {out}", file=sys.stderr)
    return 0


def _buckets_csv(data: dict) -> str:
    rows = [["bucket_lo", "bucket_hi", "n_correct", "n_incorrect", "n_unfinished", "accuracy_ratio"]]
    for b in data["buckets"]:
        ratio = "" if b["accuracy_ratio"] is None else repr(b["accuracy_ratio"])
        rows.append([b["lo"], b["hi"], b["n_correct"], b["n_incorrect"], b["n_unfinished"], ratio])
    return _csv_text(rows)


def _histogram_csv(data: dict) -> str:
    hists = data["histograms"]["correctness"]
    classes = sorted(hists)
    los = sorted({lo for series in hists.values() for lo, _ in series})
    by_class = {name: dict(map(tuple, series)) for name, series in hists.items()}
    rows = [["bucket_lo"] + classes]
    for lo in los:
        rows.append([lo] + [by_class[name].get(lo, 0) for name in classes])
    return _csv_text(rows)


def _errors_csv(data: dict) -> str:
    cats = data["error_categories"]
    rows = [["category", "fraction", "n_analyzed"]]
    for name, fraction in sorted(cats["fractions"].items()):
        rows.append([name, repr(fraction), cats["n_analyzed"]])
    return _csv_text(rows)


def _csv_text(rows) -> str:
    import io

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerows(rows)
    return buffer.getvalue()


def _render_ablation(payload: dict, args) -> int:
    from .harness import AblationTable

    table = AblationTable.from_dict(payload)
    if args.format == "json":
        text = json.dumps(table.to_dict(), sort_keys=True, indent=2) + "\n"
        if args.out:
            _write_output(Path(args.out), text, args.force)
        else:
            sys.stdout.write(text)
        return 0
    out = _out_dir(args)
    if args.format == "csv":
        rows = [["dataset"] + list(table.labels)]
        for dataset in table.datasets:
            rows.append([dataset] + [table.cell_text(label, dataset) for label in table.labels])
        _write_output(out / "ablation_table.csv", _csv_text(rows), args.force)
    else:
        values = {
            dataset: [table.cell(label, dataset).mean_accuracy for label in table.labels]
            for dataset in table.datasets
        }
        _write_output(
            out / "ablation_bars.svg",
            charts.ablation_bars_svg(table.labels, values, "Ablation accuracy by condition"),
            args.force,
        )
    print(f"wrote {args.format} ablation files to {out}", file=sys.stderr)
    return 0

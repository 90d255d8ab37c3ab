from __future__ import annotations

import json
from pathlib import Path

import pytest

from visagent.cli import main

FIXTURES = Path(__file__).parent / "fixtures"
TINY = str(FIXTURES / "tiny.jsonl")
CONFIG = str(FIXTURES / "scripted_config.json")


def run_cli(*argv) -> int:
    return main(list(argv))


@pytest.fixture
def out_log(tmp_path):
    out = tmp_path / "out.jsonl"
    code = run_cli("run", "--dataset", TINY, "--config", CONFIG, "--seeds", "1", "--out", str(out))
    assert code == 0
    return out


class TestRun:
    def test_fixture_run_writes_one_record_per_item(self, out_log):
        lines = [json.loads(line) for line in out_log.read_text().splitlines()]
        assert len(lines) == 3
        assert sorted(row["item_id"] for row in lines) == ["q1", "q2", "q3"]
        by_id = {row["item_id"]: row for row in lines}
        assert by_id["q1"]["correct"] is True
        assert by_id["q3"]["correct"] is False  # scripted C vs gold D

    def test_missing_dataset_exits_1_and_names_path(self, tmp_path, capsys):
        code = run_cli(
            "run", "--dataset", "missing.jsonl", "--config", CONFIG,
            "--out", str(tmp_path / "x.jsonl"),
        )
        assert code == 1
        assert "missing.jsonl" in capsys.readouterr().err

    def test_refuses_overwrite_without_force(self, out_log, capsys):
        code = run_cli("run", "--dataset", TINY, "--config", CONFIG, "--out", str(out_log))
        assert code == 1
        assert "--force" in capsys.readouterr().err

    def test_force_overwrite_is_byte_identical(self, out_log):
        before = out_log.read_bytes()
        code = run_cli(
            "run", "--dataset", TINY, "--config", CONFIG, "--out", str(out_log), "--force"
        )
        assert code == 0
        assert out_log.read_bytes() == before

    def test_unknown_command_exits_1(self, capsys):
        assert run_cli("frobnicate") == 1

    def test_bad_config_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code = run_cli("run", "--dataset", TINY, "--config", str(bad), "--out", str(tmp_path / "o"))
        assert code == 2


class TestAnalyze:
    def test_bucket_totals_equal_record_count(self, out_log, tmp_path):
        report_path = tmp_path / "report.json"
        code = run_cli("analyze", str(out_log), "--bucket-width", "250", "--out", str(report_path))
        assert code == 0
        report = json.loads(report_path.read_text())
        data = report["datasets"]["tiny"]
        bucket_total = sum(
            b["n_correct"] + b["n_incorrect"] + b["n_unfinished"] for b in data["buckets"]
        )
        assert bucket_total + data["n_error"] == data["n_records"] == 3

    def test_analyze_stdout_when_no_out(self, out_log, capsys):
        assert run_cli("analyze", str(out_log)) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["kind"] == "diagnostics_report"

    def test_idempotent_byte_identical(self, out_log, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run_cli("analyze", str(out_log), "--out", str(a)) == 0
        assert run_cli("analyze", str(out_log), "--out", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_bad_bucket_width_exits_1(self, out_log):
        assert run_cli("analyze", str(out_log), "--bucket-width", "0") == 1

    def test_inputs_not_mutated(self, out_log, tmp_path):
        before = out_log.read_bytes()
        assert run_cli("analyze", str(out_log), "--out", str(tmp_path / "r.json")) == 0
        assert out_log.read_bytes() == before

    def test_corrupt_log_exits_2(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{}\n")
        assert run_cli("analyze", str(bad)) == 2


class TestReport:
    @pytest.fixture
    def analysis(self, out_log, tmp_path):
        path = tmp_path / "report.json"
        assert run_cli("analyze", str(out_log), "--out", str(path)) == 0
        return path

    def test_json_round_trip(self, analysis, capsys):
        assert run_cli("report", "--analysis", str(analysis), "--format", "json") == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["kind"] == "diagnostics_report"

    def test_csv_outputs(self, analysis, tmp_path):
        out_dir = tmp_path / "csv"
        assert run_cli(
            "report", "--analysis", str(analysis), "--format", "csv", "--out", str(out_dir)
        ) == 0
        names = {p.name for p in out_dir.iterdir()}
        assert names == {
            "tiny_bucket_stats.csv",
            "tiny_token_histogram.csv",
            "tiny_error_categories.csv",
        }
        header = (out_dir / "tiny_bucket_stats.csv").read_text().splitlines()[0]
        assert header.startswith("bucket_lo,bucket_hi")

    def test_svg_outputs_idempotent(self, analysis, tmp_path):
        out_dir = tmp_path / "svg"
        for _ in range(2):
            assert run_cli(
                "report", "--analysis", str(analysis), "--format", "svg",
                "--out", str(out_dir), "--force",
            ) == 0
        names = {p.name for p in out_dir.iterdir()}
        assert names == {"tiny_token_histogram.svg", "tiny_accuracy_curve.svg"}
        first = (out_dir / "tiny_token_histogram.svg").read_bytes()
        assert run_cli(
            "report", "--analysis", str(analysis), "--format", "svg",
            "--out", str(out_dir), "--force",
        ) == 0
        assert (out_dir / "tiny_token_histogram.svg").read_bytes() == first

    def test_svg_without_out_is_usage_error(self, analysis):
        assert run_cli("report", "--analysis", str(analysis), "--format", "svg") == 1

    def test_unrecognized_kind_exits_1(self, tmp_path):
        stray = tmp_path / "stray.json"
        stray.write_text('{"kind": "mystery"}')
        assert run_cli("report", "--analysis", str(stray)) == 1


class TestAblate:
    def test_grid_from_config(self, tmp_path):
        table_path = tmp_path / "table.json"
        logs_path = tmp_path / "ablation_logs.jsonl"
        code = run_cli(
            "ablate", "--dataset", TINY, "--config", CONFIG,
            "--out", str(table_path), "--logs-out", str(logs_path), "--resamples", "50",
        )
        assert code == 0
        table = json.loads(table_path.read_text())
        assert table["kind"] == "ablation_table"
        assert table["labels"] == ["Full", "-OCR"]
        assert len(logs_path.read_text().splitlines()) == 6  # 2 conditions x 3 items

    def test_ablation_report_svg(self, tmp_path):
        table_path = tmp_path / "table.json"
        assert run_cli(
            "ablate", "--dataset", TINY, "--config", CONFIG,
            "--out", str(table_path), "--resamples", "50",
        ) == 0
        out_dir = tmp_path / "charts"
        assert run_cli(
            "report", "--analysis", str(table_path), "--format", "svg", "--out", str(out_dir)
        ) == 0
        assert (out_dir / "ablation_bars.svg").exists()

    def test_missing_grid_is_usage_error(self, tmp_path):
        config = json.loads(Path(CONFIG).read_text())
        config.pop("ablation_grid")
        stripped = tmp_path / "nogrid.json"
        stripped.write_text(json.dumps(config))
        code = run_cli(
            "ablate", "--dataset", TINY, "--config", str(stripped), "--out", str(tmp_path / "t.json")
        )
        assert code == 1

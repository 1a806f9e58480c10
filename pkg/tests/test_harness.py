"""Evaluation harness, report emission, corpus files, and the CLI surface."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from captcha_grid_lab import harness
from captcha_grid_lab.challenge import RateLimitConfig
from captcha_grid_lab.harness import (
    EvalConfig,
    EvalReport,
    StartupError,
    eval_config_from_kv,
    gen_corpus,
    load_corpus_challenge,
    parse_kv_config,
    run_click_patterns,
    run_eval,
    simulate_rate_limit_days,
    write_report,
    write_traces,
)
from captcha_grid_lab.imaging import read_png, read_record_sidecar


def small_config(**kw):
    defaults = dict(
        n_sessions=60, seed=5, detector="perfect", policy="strict", kind="selection", write_traces=False
    )
    defaults.update(kw)
    return EvalConfig(**defaults)


class TestRunEval:
    def test_perfect_detector_all_pass(self):
        report, results = run_eval(small_config())
        challenged = report.totals["sessions"] - report.totals["no_challenge"]
        assert report.totals["passed"] == challenged
        assert report.success_rate == 1.0

    def test_conservation(self):
        report, _ = run_eval(small_config(detector="base", n_sessions=80))
        t = report.totals
        assert t["passed"] + t["failed"] + t["no_challenge"] == t["sessions"]
        assert sum(report.rounds_histogram.values()) == t["sessions"]

    def test_deterministic_reports(self):
        a, _ = run_eval(small_config(detector="augmented"))
        b, _ = run_eval(small_config(detector="augmented"))
        assert a.to_dict() == b.to_dict()

    def test_different_seed_differs(self):
        a, _ = run_eval(small_config(detector="base", n_sessions=120))
        b, _ = run_eval(small_config(detector="base", n_sessions=120, seed=6))
        assert a.to_dict() != b.to_dict()

    def test_unresolvable_detector_is_startup_error(self):
        with pytest.raises(StartupError):
            run_eval(small_config(detector="does-not-exist"))

    def test_unresolvable_policy_is_startup_error(self):
        with pytest.raises(StartupError):
            run_eval(small_config(policy="missing-policy"))

    def test_parallel_matches_serial(self):
        serial, _ = run_eval(small_config(n_sessions=40))
        parallel, _ = run_eval(small_config(n_sessions=40, jobs=2))
        a, b = serial.to_dict(), parallel.to_dict()
        # the embedded config legitimately differs in its jobs field
        a.pop("config"), b.pop("config")
        assert a == b

    def test_target_band_note(self):
        report, _ = run_eval(small_config(target_band=(0.9, 1.0)))
        assert report.notes["in_target_band"] is True
        assert "model fit" in report.notes["band_meaning"]


class TestReportFiles:
    def test_files_written_and_stable(self, tmp_path):
        report, _ = run_eval(small_config())
        out = tmp_path / "run"
        paths = write_report(report, str(out))
        names = {Path(p).name for p in paths}
        assert names == {"report.json", "summary.csv", "timing.csv"}
        first = {p: Path(p).read_bytes() for p in paths}
        write_report(report, str(out))
        assert {p: Path(p).read_bytes() for p in paths} == first

    def test_timing_csv_shape(self, tmp_path):
        report, _ = run_eval(small_config())
        write_report(report, str(tmp_path))
        lines = (tmp_path / "timing.csv").read_text().strip().splitlines()
        assert lines[0] == "percentile,seconds"
        assert [row.split(",")[0] for row in lines[1:]] == ["1", "5", "50", "95", "99"]

    def test_summary_csv_one_row_per_category(self, tmp_path):
        report, _ = run_eval(small_config())
        write_report(report, str(tmp_path))
        lines = (tmp_path / "summary.csv").read_text().strip().splitlines()
        assert lines[0] == "category,challenges,passed,success_rate"
        assert len(lines) == 1 + len(report.categories)

    def test_report_round_trip(self, tmp_path):
        report, _ = run_eval(small_config())
        write_report(report, str(tmp_path))
        loaded = EvalReport.from_dict(json.loads((tmp_path / "report.json").read_text()))
        assert loaded.to_dict() == report.to_dict()

    def test_traces_written(self, tmp_path):
        config = small_config(write_traces=True, n_sessions=10)
        _, results = run_eval(config)
        n = write_traces(results, str(tmp_path))
        assert n > 0
        trace_file = next((tmp_path / "traces").glob("session-*.jsonl"))
        lines = trace_file.read_text().strip().splitlines()
        assert all("action" in json.loads(line) for line in lines)


class TestConfigFile:
    def test_parse_kv(self):
        text = "# comment\nn_sessions = 12\nseed=9\ndetector = base\nwebdriver = true\n"
        values = parse_kv_config(text)
        config = eval_config_from_kv(values)
        assert config.n_sessions == 12
        assert config.seed == 9
        assert config.detector == "base"
        assert config.webdriver is True

    def test_overrides_win(self):
        config = eval_config_from_kv({"seed": "9", "detector": "base"}, seed=4)
        assert config.seed == 4
        assert config.detector == "base"

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            eval_config_from_kv({"bogus": "1"})

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError):
            parse_kv_config("this line has no equals sign")


class TestCorpus:
    def test_gen_corpus_files(self, tmp_path):
        paths = gen_corpus(str(tmp_path), n=4, seed=3, unperturbed=True)
        assert len(paths) == 4
        for meta_path in paths:
            meta = json.loads(Path(meta_path).read_text())
            assert set(meta) == {"id", "kind", "target", "grid", "ground_truth_pgns", "perturbation", "seed"}
            entry = load_corpus_challenge(meta_path)
            image = read_png(entry.image_path)
            assert image.shape == (400, 400, 3)
            assert entry.ground_truth_pgns
            assert read_record_sidecar(entry.image_path) == entry.perturbation
            assert entry.perturbation.total_sigma == 0.0

    def test_corpus_deterministic(self, tmp_path):
        a = gen_corpus(str(tmp_path / "a"), n=2, seed=8)
        b = gen_corpus(str(tmp_path / "b"), n=2, seed=8)
        for pa, pb in zip(a, b):
            assert Path(pa).read_text() == Path(pb).read_text()
            assert Path(pa.replace(".json", ".png")).read_bytes() == Path(pb.replace(".json", ".png")).read_bytes()


class TestClickPatterns:
    def test_zero_rows_stay_zero(self):
        rows = run_click_patterns(trials=40, seed=1)
        for row in rows:
            if row["preset_rate"] == 0.0:
                assert row["passes"] == 0

    def test_row_shape(self):
        rows = run_click_patterns(trials=10, seed=2)
        assert len(rows) == 8
        assert {r["wrong"] for r in rows} == {0, 1, 2}


class TestRateLimitScenario:
    def test_three_day_regular(self):
        result = simulate_rate_limit_days(days=3, requests_per_day=1000, seed=4)
        for day in result["per_day"]:
            assert day["blocked"] >= 180
        assert all(36.0 <= d <= 95.0 for d in result["block_durations_min"])

    def test_tor_profile(self):
        result = simulate_rate_limit_days(days=1, requests_per_day=1000, ip_class="tor", seed=5)
        assert result["per_day"][0]["blocked"] >= 250


class TestCli:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "captcha_grid_lab.cli", *args],
            capture_output=True,
            text=True,
        )

    def test_usage_error_exits_1(self):
        proc = self.run_cli("no-such-command")
        assert proc.returncode == 1

    def test_runtime_error_exits_2(self, tmp_path):
        proc = self.run_cli("eval", "--detector", "nope", "--out", str(tmp_path), "--n-sessions", "2")
        assert proc.returncode == 2

    def test_eval_and_report(self, tmp_path):
        out = tmp_path / "run"
        proc = self.run_cli(
            "eval", "--n-sessions", "8", "--seed", "3", "--detector", "perfect",
            "--policy", "strict", "--kind", "selection", "--out", str(out), "--no-traces",
        )
        assert proc.returncode == 0, proc.stderr
        assert (out / "report.json").exists()
        rerender = tmp_path / "rerender"
        proc = self.run_cli("report", str(out / "report.json"), "--out", str(rerender))
        assert proc.returncode == 0, proc.stderr
        assert (rerender / "timing.csv").read_bytes() == (out / "timing.csv").read_bytes()

    def test_gen_solve_perturb_estimate(self, tmp_path):
        corpus = tmp_path / "corpus"
        proc = self.run_cli("gen", "--n", "2", "--seed", "1", "--out", str(corpus), "--unperturbed")
        assert proc.returncode == 0, proc.stderr
        pngs = sorted(corpus.glob("*.png"))
        assert len(pngs) == 2

        proc = self.run_cli("solve", "--seed", "4", "--detector", "perfect")
        assert proc.returncode == 0, proc.stderr
        actions = [json.loads(line) for line in proc.stdout.strip().splitlines()]
        assert actions[-1]["action"] == "submit"

        perturbed = tmp_path / "perturbed"
        proc = self.run_cli("perturb", "--seed", "2", "--out", str(perturbed), str(pngs[0]))
        assert proc.returncode == 0, proc.stderr

        proc = self.run_cli("estimate-noise", str(pngs[0]))
        assert proc.returncode == 0, proc.stderr
        assert "clean" in proc.stdout

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n_sessions = 5\ndetector = perfect\npolicy = strict\nkind = selection\nwrite_traces = false\n")
        out = tmp_path / "out"
        proc = self.run_cli("eval", "--config", str(cfg), "--seed", "2", "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        report = json.loads((out / "report.json").read_text())
        assert report["totals"]["sessions"] == 5

    def test_click_patterns_scenario(self):
        proc = self.run_cli("eval", "--scenario", "click-patterns", "--seed", "1", "--policy", "table5")
        assert proc.returncode == 0, proc.stderr
        rows = json.loads(proc.stdout)
        assert len(rows) == 8

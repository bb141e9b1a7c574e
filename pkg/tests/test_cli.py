"""End-to-end tests for the experiment CLI: exit codes, files, determinism."""

from __future__ import annotations

import csv
import json
import math
import re

import numpy as np
import pytest

from tsyblearn import cli
from tsyblearn.synthetic import (
    Family,
    InstanceSpec,
    MarginalSpec,
    constant_rate,
    read_binary,
    read_text,
    sample_batch,
)


def run_cli(*argv) -> int:
    return cli.main([str(a) for a in argv])


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class TestGenerate:
    def test_zero_n_exits_usage(self, tmp_path):
        assert run_cli(
            "generate", "--output-dir", tmp_path, "--n", 0
        ) == cli.EXIT_USAGE

    def test_negative_n_exits_usage(self, tmp_path):
        assert run_cli(
            "generate", "--output-dir", tmp_path, "--n", -5
        ) == cli.EXIT_USAGE

    def test_unknown_family_exits_usage(self, tmp_path):
        assert run_cli(
            "generate", "--output-dir", tmp_path, "--family", "cauchy",
            "--n", 100,
        ) == cli.EXIT_USAGE

    def test_deterministic_bytes(self, tmp_path):
        for sub in ("a", "b"):
            code = run_cli(
                "generate", "--output-dir", tmp_path / sub, "-d", 3,
                "--n", 2_000, "--seed", 11,
            )
            assert code == cli.EXIT_OK
        a = (tmp_path / "a" / "dataset.txt").read_bytes()
        b = (tmp_path / "b" / "dataset.txt").read_bytes()
        assert a == b

    def test_flip_rate_summary(self, tmp_path, capsys):
        code = run_cli(
            "generate", "--output-dir", tmp_path, "-d", 4, "--n", 100_000,
            "--eta0", 0.3, "--seed", 7,
        )
        assert code == cli.EXIT_OK
        out = capsys.readouterr().out
        match = re.search(r"flip_rate=([0-9.]+)", out)
        assert match is not None
        assert float(match.group(1)) == pytest.approx(0.3, abs=0.005)
        assert (tmp_path / "effective_config.json").exists()
        assert (tmp_path / "meta.json").exists()

    def test_text_roundtrip_bit_exact(self, tmp_path):
        code = run_cli(
            "generate", "--output-dir", tmp_path, "-d", 3, "--n", 500,
            "--eta0", 0.3, "--seed", 1,
        )
        assert code == cli.EXIT_OK
        batch, seed = read_text(tmp_path / "dataset.txt")
        inst = InstanceSpec(
            MarginalSpec(Family.STANDARD_GAUSSIAN, 3),
            np.array([1.0, 0.0, 0.0]),
            constant_rate(0.5, 0.3),
            seed=1,
        )
        expect = sample_batch(inst, 500, batch=0)
        assert seed == 1
        assert np.array_equal(batch.x, expect.x)
        assert np.array_equal(batch.y, expect.y)

    def test_binary_roundtrip_bit_exact(self, tmp_path):
        code = run_cli(
            "generate", "--output-dir", tmp_path, "-d", 3, "--n", 500,
            "--format", "binary", "--seed", 3,
        )
        assert code == cli.EXIT_OK
        batch = read_binary(tmp_path / "dataset.bin")
        inst = InstanceSpec(
            MarginalSpec(Family.STANDARD_GAUSSIAN, 3),
            np.array([1.0, 0.0, 0.0]),
            constant_rate(0.5, 0.1),
            seed=3,
        )
        expect = sample_batch(inst, 500, batch=0)
        assert np.array_equal(batch.x, expect.x)
        assert np.array_equal(batch.y, expect.y)

    def test_bad_format_exits_usage(self, tmp_path):
        assert run_cli(
            "generate", "--output-dir", tmp_path, "--n", 10,
            "--format", "parquet",
        ) == cli.EXIT_USAGE


class TestCertify:
    def test_fail_at_target_exits_3(self, tmp_path):
        code = run_cli(
            "certify", "--output-dir", tmp_path, "--w", "1,0,0",
            "--eta0", 0.0, "--epsilon", 0.15, "--seed", 0,
        )
        assert code == cli.EXIT_FAIL
        payload = json.loads((tmp_path / "witness.json").read_text())
        assert payload["certified"] is False
        assert payload["witness"] is None

    def test_perpendicular_witness_exits_0(self, tmp_path):
        code = run_cli(
            "certify", "--output-dir", tmp_path, "--w", "0,1,0",
            "--eta0", 0.0, "--epsilon", 0.15, "--samples-n", 100_000,
            "--oracle-samples", 100_000, "--seed", 0,
        )
        assert code == cli.EXIT_OK
        payload = json.loads((tmp_path / "witness.json").read_text())
        assert payload["certified"] is True
        assert payload["witness"]["value"] < 0.0

    def test_malformed_vector_exits_usage(self, tmp_path):
        assert run_cli(
            "certify", "--output-dir", tmp_path, "--w", "1,banana,0"
        ) == cli.EXIT_USAGE

    def test_missing_w_exits_usage(self, tmp_path):
        assert run_cli("certify", "--output-dir", tmp_path) == cli.EXIT_USAGE

    def test_nonunit_w_normalized(self, tmp_path):
        code = run_cli(
            "certify", "--output-dir", tmp_path, "--w", "0,2,0",
            "--eta0", 0.0, "--epsilon", 0.15, "--seed", 0,
        )
        assert code == cli.EXIT_OK
        payload = json.loads((tmp_path / "witness.json").read_text())
        assert payload["queried_w"] == pytest.approx([0.0, 1.0, 0.0])

    def test_auto_c_reports_calibration(self, tmp_path):
        code = run_cli(
            "certify", "--output-dir", tmp_path, "--w", "0,1,0",
            "--theta0", 0.0, "--epsilon", 0.15, "--auto-c", "--seed", 0,
        )
        assert code == cli.EXIT_OK
        payload = json.loads((tmp_path / "witness.json").read_text())
        assert payload["diagnostics"]["calibrated_rho"] > 0.0

    def test_dataset_text_mode(self, tmp_path):
        assert run_cli(
            "generate", "--output-dir", tmp_path / "ds", "-d", 3,
            "--n", 100_000, "--eta0", 0.0, "--seed", 2,
        ) == cli.EXIT_OK
        code = run_cli(
            "certify", "--output-dir", tmp_path / "cert",
            "--dataset", tmp_path / "ds" / "dataset.txt", "--w", "0,1,0",
            "--epsilon", 0.15, "--oracle-samples", 2_000, "--seed", 0,
        )
        assert code == cli.EXIT_OK
        payload = json.loads((tmp_path / "cert" / "witness.json").read_text())
        assert payload["certified"] is True
        assert payload["witness"]["value"] < 0.0
        assert payload["oracle"] == "dataset-scan"

    def test_dataset_binary_mode(self, tmp_path):
        assert run_cli(
            "generate", "--output-dir", tmp_path / "ds", "-d", 3,
            "--n", 50_000, "--format", "binary", "--eta0", 0.0, "--seed", 3,
        ) == cli.EXIT_OK
        code = run_cli(
            "certify", "--output-dir", tmp_path / "cert",
            "--dataset", tmp_path / "ds" / "dataset.bin", "--w", "0,0,1",
            "--epsilon", 0.15, "--oracle-samples", 2_000, "--seed", 0,
        )
        assert code == cli.EXIT_OK

    def test_dataset_dimension_mismatch_exits_usage(self, tmp_path):
        assert run_cli(
            "generate", "--output-dir", tmp_path / "ds", "-d", 3,
            "--n", 1_000, "--seed", 2,
        ) == cli.EXIT_OK
        assert run_cli(
            "certify", "--output-dir", tmp_path / "cert",
            "--dataset", tmp_path / "ds" / "dataset.txt", "--w", "0,1,0,0",
        ) == cli.EXIT_USAGE

    def test_missing_dataset_exits_usage(self, tmp_path):
        assert run_cli(
            "certify", "--output-dir", tmp_path, "--w", "0,1,0",
            "--dataset", tmp_path / "nope.txt",
        ) == cli.EXIT_USAGE


class TestLearn:
    def test_epsilon_out_of_range_exits_usage(self, tmp_path):
        code = run_cli(
            "learn", "--output-dir", tmp_path, "--epsilon", 2 * math.pi
        )
        assert code == cli.EXIT_USAGE
        assert not (tmp_path / "metrics.csv").exists()

    def test_pipeline_hits_with_random_init_oracle(self, tmp_path):
        code = run_cli(
            "learn", "--output-dir", tmp_path, "-d", 5, "--eta0", 0.2,
            "--epsilon", 0.15, "--start", "zero",
            "--oracle-samples", 200_000, "--repeats", 10, "--seed", 0,
        )
        assert code == cli.EXIT_OK
        rows = read_rows(tmp_path / "metrics.csv")
        assert len(rows) == 10
        with open(tmp_path / "metrics.csv", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        assert header == cli.METRICS_HEADER
        hits = 0
        for row in rows:
            assert row["schema_version"] == "1"
            assert row["wall_ms"] == "0"
            assert 0.0 <= float(row["final_angle"]) <= math.pi
            assert 0.0 <= float(row["final_01_error"]) <= 1.0
            hits += float(row["final_angle"]) <= 0.15
        assert hits >= 8
        model = json.loads((tmp_path / "model.json").read_text())
        assert model["final_angle"] == float(rows[0]["final_angle"])
        assert (tmp_path / "trace.jsonl").exists()
        assert (tmp_path / "effective_config.json").exists()

    def test_pipeline_hits_with_warm_start_oracle(self, tmp_path):
        code = run_cli(
            "learn", "--output-dir", tmp_path, "-d", 5, "--eta0", 0.2,
            "--epsilon", 0.15, "--start", "zero",
            "--oracle", "LogConcaveWarmStart", "--repeats", 10, "--seed", 0,
        )
        assert code == cli.EXIT_OK
        rows = read_rows(tmp_path / "metrics.csv")
        hits = sum(float(r["final_angle"]) <= 0.15 for r in rows)
        assert hits >= 8

    def test_repeat_csv_determinism(self, tmp_path):
        argv = [
            "learn", "-d", 3, "--eta0", 0.1, "--epsilon", 0.2,
            "--start", "zero", "--samples-n", 50_000,
            "--oracle-samples", 50_000, "--repeats", 3, "--seed", 5,
        ]
        assert run_cli(*argv, "--output-dir", tmp_path / "a") == cli.EXIT_OK
        assert run_cli(*argv, "--output-dir", tmp_path / "b") == cli.EXIT_OK
        a = (tmp_path / "a" / "metrics.csv").read_bytes()
        b = (tmp_path / "b" / "metrics.csv").read_bytes()
        assert a == b
        assert (tmp_path / "a" / "model.json").read_bytes() == (
            tmp_path / "b" / "model.json"
        ).read_bytes()
        assert (tmp_path / "a" / "trace.jsonl").read_bytes() == (
            tmp_path / "b" / "trace.jsonl"
        ).read_bytes()

    def test_config_file_with_flag_override(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "instance": {"dimension": 3},
            "learner": {"epsilon": 0.2, "samples_n": 1_000, "max_rounds": 2,
                        "start": "e1"},
            "oracle_samples": 1_000,
        }))
        code = run_cli(
            "learn", "--config", cfg_path, "--output-dir", tmp_path / "out",
            "--epsilon", 0.25,
        )
        assert code == cli.EXIT_OK
        effective = json.loads(
            (tmp_path / "out" / "effective_config.json").read_text()
        )
        assert effective["learner"]["epsilon"] == 0.25
        assert effective["instance"]["dimension"] == 3

    def test_unknown_config_key_exits_usage(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"instanec": {}}))
        assert run_cli(
            "learn", "--config", cfg_path, "--output-dir", tmp_path
        ) == cli.EXIT_USAGE

    def test_invalid_json_config_exits_usage(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text("{not json")
        assert run_cli(
            "learn", "--config", cfg_path, "--output-dir", tmp_path
        ) == cli.EXIT_USAGE


class TestWarmstart:
    def test_uniform_ball_runs(self, tmp_path):
        code = run_cli(
            "warmstart", "--output-dir", tmp_path, "--family", "uniform_ball",
            "-d", 3, "--theta0", 1.3, "--epsilon", 0.2, "--seed", 0,
        )
        assert code == cli.EXIT_OK
        payload = json.loads((tmp_path / "warmstart.json").read_text())
        assert payload["repeats"] == 1
        assert len(payload["runs"]) == 1

    def test_gaussian_hit_rate(self, tmp_path):
        code = run_cli(
            "warmstart", "--output-dir", tmp_path, "-d", 3, "--theta0", 1.3,
            "--eta0", 0.0, "--epsilon", 0.2, "--repeats", 20, "--seed", 0,
        )
        assert code == cli.EXIT_OK
        payload = json.loads((tmp_path / "warmstart.json").read_text())
        assert payload["repeats"] == 20
        assert payload["hits_at_0.05"] >= 6
        correlations = [
            run["correlation"] for run in payload["runs"]
            if "correlation" in run
        ]
        assert all(-1.0 - 1e-9 <= c <= 1.0 + 1e-9 for c in correlations)

    def test_unknown_family_exits_usage(self, tmp_path):
        assert run_cli(
            "warmstart", "--output-dir", tmp_path, "--family", "pareto"
        ) == cli.EXIT_USAGE

    def test_determinism(self, tmp_path):
        argv = [
            "warmstart", "-d", 3, "--theta0", 1.0, "--epsilon", 0.2,
            "--repeats", 3, "--seed", 4,
        ]
        assert run_cli(*argv, "--output-dir", tmp_path / "a") == cli.EXIT_OK
        assert run_cli(*argv, "--output-dir", tmp_path / "b") == cli.EXIT_OK
        assert (tmp_path / "a" / "warmstart.json").read_bytes() == (
            tmp_path / "b" / "warmstart.json"
        ).read_bytes()


class TestSweep:
    def test_missing_grid_exits_usage(self, tmp_path):
        assert run_cli(
            "sweep", "--output-dir", tmp_path
        ) == cli.EXIT_USAGE

    def test_empty_list_grid_exits_usage(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"sweep": {"n": []}}))
        assert run_cli(
            "sweep", "--config", cfg_path, "--output-dir", tmp_path
        ) == cli.EXIT_USAGE

    def test_unknown_sweep_key_exits_usage(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"sweep": {"gamma": [1, 2]}}))
        assert run_cli(
            "sweep", "--config", cfg_path, "--output-dir", tmp_path
        ) == cli.EXIT_USAGE

    def test_bad_workers_env_exits_usage(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TSYBLEARN_WORKERS", "many")
        assert run_cli(
            "sweep", "--output-dir", tmp_path, "--sweep-n", "1000",
        ) == cli.EXIT_USAGE

    def test_median_angle_non_increasing_in_n(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TSYBLEARN_WORKERS", "2")
        code = run_cli(
            "sweep", "--output-dir", tmp_path, "-d", 5, "--eta0", 0.2,
            "--epsilon", 0.15, "--start", "zero",
            "--sweep-n", "1000,10000,100000", "--repeats", 3, "--seed", 0,
        )
        assert code == cli.EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())
        medians = [
            summary[json.dumps({"n": n})]["median_final_angle"]
            for n in (1_000, 10_000, 100_000)
        ]
        assert all(m is not None for m in medians)
        inversions = sum(b > a for a, b in zip(medians, medians[1:]))
        assert inversions <= 1

    def test_alpha_ordering(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TSYBLEARN_WORKERS", "2")
        code = run_cli(
            "sweep", "--output-dir", tmp_path, "-d", 5,
            "--noise", "margin_power_law", "--scale", 0.5,
            "--epsilon", 0.15, "--start", "zero", "--samples-n", 50_000,
            "--sweep-alpha", "0.5,0.8", "--repeats", 5, "--seed", 0,
        )
        assert code == cli.EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())
        low = summary[json.dumps({"alpha": 0.5})]["median_final_angle"]
        high = summary[json.dumps({"alpha": 0.8})]["median_final_angle"]
        assert high <= low + 0.05

    def test_worker_count_invariance(self, tmp_path, monkeypatch):
        argv = [
            "sweep", "-d", 3, "--eta0", 0.1, "--epsilon", 0.2,
            "--start", "zero", "--sweep-n", "1000,5000", "--repeats", 2,
            "--seed", 3,
        ]
        monkeypatch.setenv("TSYBLEARN_WORKERS", "1")
        assert run_cli(*argv, "--output-dir", tmp_path / "a") == cli.EXIT_OK
        monkeypatch.setenv("TSYBLEARN_WORKERS", "2")
        assert run_cli(*argv, "--output-dir", tmp_path / "b") == cli.EXIT_OK
        a = (tmp_path / "a" / "metrics.csv").read_bytes()
        b = (tmp_path / "b" / "metrics.csv").read_bytes()
        assert a == b


class TestEntryPoints:
    def test_help_exits_zero(self, capsys):
        assert run_cli("--help") == 0
        assert "generate" in capsys.readouterr().out

    def test_unknown_command_exits_usage(self, capsys):
        assert run_cli("frobnicate") == cli.EXIT_USAGE

    def test_module_invocation(self, tmp_path):
        import subprocess
        import sys

        result = subprocess.run(
            [sys.executable, "-m", "tsyblearn", "generate",
             "--output-dir", str(tmp_path), "-d", "2", "--n", "100"],
            capture_output=True, text=True,
        )
        assert result.returncode == 0
        assert (tmp_path / "dataset.txt").exists()

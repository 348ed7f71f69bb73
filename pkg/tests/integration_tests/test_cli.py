import json
import os
import subprocess
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
import pandas as pd

ENV = {**os.environ, "COLUMNS": "400", "LRSPATIAL_THREADS": "1"}


def run(*args, check=True):
    result = subprocess.run(["lrspatial", *args], capture_output=True, text=True, env=ENV)
    if check:
        assert result.returncode == 0, result.stderr
    return result


def generated(tmpdir, *extra):
    run("generate", "--n", "200", "--seed", "11", "--out", tmpdir, *extra)
    return Path(tmpdir)


def test_generate_then_fit_lowrank_error_model():
    with TemporaryDirectory() as tmpdir:
        out = generated(tmpdir, "--dgp", "SEM-noise", "--dependence", "0.6")
        fit_out = out / "fit"
        run(
            "fit", "--data", str(out / "data.csv"), "--response", "y", "--model", "LSEM",
            "--weights", str(out / "weights.txt"), "--rank", "50", "--out", str(fit_out),
        )

        with open(fit_out / "fit_report.json") as f:
            report = json.load(f)
        beta1 = report["coefficients"][1]
        assert report["kind"] == "LSEM"
        assert report["L"] == 50
        assert abs(beta1["estimate"] - 2.0) < 3 * beta1["se"]
        assert set(report["theta"]) == {"phi"}
        assert report["seed"] == 0

        effects = pd.read_csv(fit_out / "effects.csv")
        assert effects["covariate"].tolist() == ["x1", "x2"]
        assert not (fit_out / "bootstrap_summary.csv").exists()


def test_fit_with_coords_and_bootstrap():
    with TemporaryDirectory() as tmpdir:
        out = generated(tmpdir, "--dgp", "SLM-noise", "--dependence", "0.5")
        fit_out = out / "fit"
        run(
            "fit", "--data", str(out / "data.csv"), "--response", "y", "--model", "LSLM",
            "--coords", str(out / "coords.csv"), "--rank", "40", "--bootstrap", "20",
            "--seed", "5", "--out", str(fit_out),
        )

        summary = pd.read_csv(fit_out / "bootstrap_summary.csv")
        assert len(summary) > 0
        effects = pd.read_csv(fit_out / "effects.csv")
        assert (effects["DE_lower"] <= effects["DE_upper"]).all()


def test_ordinary_least_squares_has_no_dependence():
    with TemporaryDirectory() as tmpdir:
        out = generated(tmpdir)
        run(
            "fit", "--data", str(out / "data.csv"), "--response", "y", "--model", "LM",
            "--weights", str(out / "weights.txt"), "--out", str(out / "fit"),
        )
        with open(out / "fit" / "fit_report.json") as f:
            report = json.load(f)
        assert report["theta"] is None
        assert "moran_z" in report


def test_durbin_fit_needs_rows_for_lagged_covariates():
    with TemporaryDirectory() as tmpdir:
        out = Path(tmpdir)
        rng = np.random.default_rng(3)
        n, covariates = 12, 7
        frame = pd.DataFrame(
            rng.standard_normal((n, covariates)), columns=[f"x{k}" for k in range(1, covariates + 1)]
        )
        frame["y"] = rng.standard_normal(n)
        frame.to_csv(out / "data.csv", index=False)
        pd.DataFrame(rng.standard_normal((n, 2)), columns=["x", "y"]).to_csv(
            out / "coords.csv", index=False
        )

        result = run(
            "fit", "--data", str(out / "data.csv"), "--response", "y", "--model", "LSDM",
            "--coords", str(out / "coords.csv"), "--rank", "3", "--out", str(out / "fit"),
            check=False,
        )
        assert result.returncode == 1
        assert "data:" in result.stderr
        assert "15 fixed coefficients" in result.stderr
        assert not (out / "fit" / "fit_report.json").exists()


def test_missing_weights_file():
    with TemporaryDirectory() as tmpdir:
        out = generated(tmpdir)
        missing = out / "nowhere.txt"
        result = run(
            "fit", "--data", str(out / "data.csv"), "--response", "y",
            "--weights", str(missing), "--out", str(out / "fit"), check=False,
        )
        assert result.returncode == 1
        assert "weights" in result.stderr
        assert str(missing) in result.stderr


def test_malformed_data_reports_line_and_column():
    with TemporaryDirectory() as tmpdir:
        out = generated(tmpdir)
        frame = pd.read_csv(out / "data.csv")
        frame["x1"] = frame["x1"].astype(object)
        frame.loc[2, "x1"] = "abc"
        frame.to_csv(out / "bad.csv", index=False)

        result = run(
            "fit", "--data", str(out / "bad.csv"), "--response", "y",
            "--weights", str(out / "weights.txt"), "--out", str(out / "fit"), check=False,
        )
        assert result.returncode == 1
        assert "line 4" in result.stderr
        assert "'x1'" in result.stderr


def test_simulate_is_reproducible():
    with TemporaryDirectory() as tmpdir:
        first, second = Path(tmpdir) / "a", Path(tmpdir) / "b"
        run("simulate", "smoke", "--out", str(first))
        run("simulate", "smoke", "--out", str(second), "--threads", "2")

        report = (first / "simulation_report.csv").read_bytes()
        assert report == (second / "simulation_report.csv").read_bytes()
        frame = pd.read_csv(first / "simulation_report.csv")
        assert {"scenario", "estimator", "L", "target", "mean", "rmse", "bias"} <= set(frame.columns)
        assert (first / "timings.csv").exists()


def test_simulate_rejects_empty_scenario():
    with TemporaryDirectory() as tmpdir:
        document = Path(tmpdir) / "bad.toml"
        document.write_text(
            '[[scenario]]\nid = "empty"\nreplications = 0\nestimators = ["LM"]\n'
        )
        result = run("simulate", str(document), "--out", tmpdir, check=False)
        assert result.returncode == 1
        assert "replications" in result.stderr


def test_simulate_rejects_dependence_outside_spectrum():
    with TemporaryDirectory() as tmpdir:
        document = Path(tmpdir) / "negative.toml"
        document.write_text(
            '[[scenario]]\nid = "negative"\nn = 60\ndependence = -0.95\n'
            'replications = 2\nestimators = ["LM"]\n'
        )
        result = run("simulate", str(document), "--out", tmpdir, check=False)
        assert result.returncode == 1
        assert "negative" in result.stderr
        assert "dependence -0.95 outside" in result.stderr
        assert not (Path(tmpdir) / "simulation_report.csv").exists()


def test_bench_writes_timing_table():
    with TemporaryDirectory() as tmpdir:
        run(
            "bench", "--sizes", "80", "--ranks", "10", "--kinds", "LSLM",
            "--bootstrap", "5", "--out", tmpdir,
        )
        frame = pd.read_csv(Path(tmpdir) / "benchmark.csv")
        assert list(frame.columns) == ["n", "L", "kind", "phase", "seconds", "status"]
        assert (frame["status"] == "ok").all()

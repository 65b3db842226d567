"""Tests for the experiment harness and CLI."""

import json
import os

import numpy as np
import pandas as pd
import pytest

import panellab as pl
from panellab.cli import main
from panellab.dgp import DgpSpec, generate
from panellab.harness import (
    ExperimentConfig,
    analyze_csv,
    config_hash,
    run_appendix_c,
    run_appendix_d,
    run_sweep,
    run_table1,
)
from panellab.panel import save_panel, treatment_mask


def tiny_config(reps=4, workers=1, estimators=None):
    spec = DgpSpec(design="HOM", n=12, t=8, structural_seed=2, noise_seed=3)
    estimators = estimators or [
        ("ife", {"k": 1, "restarts": 2}),
        ("gsc", {"k": 1}),
        ("sc", {}),
        ("dsc", {}),
        ("sdid", {}),
    ]
    return ExperimentConfig(
        dgp=spec, estimators=estimators, replications=reps, workers=workers
    )


class TestRunSweep:
    def test_single_replication_smoke(self):
        report = run_sweep(tiny_config(reps=1))
        assert (report.rows["reps_used"] <= 1).all()
        assert len(report.rows) == 5

    def test_worker_count_invariance(self):
        a = run_sweep(tiny_config(reps=8, workers=1))
        b = run_sweep(tiny_config(reps=8, workers=2))
        pd.testing.assert_frame_equal(a.rows, b.rows)
        assert a.rows.to_csv(index=False) == b.rows.to_csv(index=False)

    def test_bias_identity(self):
        report = run_sweep(tiny_config(reps=6))
        rows = report.rows
        assert (rows["bias"] - (rows["mean"] - rows["true_att"])).abs().max() < 1e-12

    def test_failures_excluded_and_counted(self):
        config = tiny_config(
            reps=3, estimators=[("gsc", {"k": 7})]  # k > min(N0,T): always fails
        )
        report = run_sweep(config)
        row = report.rows.iloc[0]
        assert row["n_failed"] == 3
        assert row["reps_used"] == 0
        assert np.isnan(row["mean"])

    def test_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(dgp=DgpSpec(design="HOM", n=4, t=4), estimators=[])
        with pytest.raises(ValueError):
            ExperimentConfig(
                dgp=DgpSpec(design="HOM", n=4, t=4),
                estimators=[("sc", {})],
                replications=0,
            )

    def test_outputs_written(self, tmp_path):
        config = tiny_config(reps=2)
        config.output_dir = str(tmp_path / "out")
        run_sweep(config)
        assert (tmp_path / "out" / "report.txt").exists()
        assert (tmp_path / "out" / "report.csv").exists()
        assert (tmp_path / "out" / "config.resolved").exists()

    def test_keep_reps_arrays(self):
        report = run_sweep(tiny_config(reps=5), keep_reps=True)
        data = report.per_rep["sc"]
        assert data["att"].shape == (5,)
        assert data["true_att"].shape == (5,)


class TestConfigHash:
    def test_stable_and_sensitive(self):
        a = tiny_config()
        b = tiny_config()
        assert config_hash(a) == config_hash(b)
        b.replications += 1
        assert config_hash(a) != config_hash(b)


class TestCannedStudies:
    def test_table1_smoke_column_order(self):
        report = run_table1(scale="desk", reps=1, workers=1)
        per_cell = report.rows.groupby(["design", "t", "n"])["estimator"].apply(list)
        for estimators in per_cell:
            assert estimators == ["ife", "gsc", "sc", "dsc", "sdid"]
        assert set(report.rows["design"]) == {"HOM", "HET"}
        assert set(zip(report.rows["t"], report.rows["n"])) == {
            (50, 50), (50, 100), (100, 50), (100, 100)
        }

    def test_table1_rejects_unknown_scale(self):
        with pytest.raises(ValueError):
            run_table1(scale="huge")

    def test_appendix_c_artifacts(self, tmp_path):
        out = tmp_path / "appc"
        report, artifact = run_appendix_c(
            k_alpha=2, reps=12, size=(16, 12), output_dir=str(out),
            structural_seed=3, bins=10,
        )
        assert artifact["reference_att"] == 0.75
        assert (out / "histogram.bins").exists()
        assert (out / "dispersion_by_quartile.txt").exists()
        lines = (out / "histogram.bins").read_text().strip().splitlines()
        counts = [int(line.split()[2]) for line in lines[1:]]
        assert sum(counts) == len(artifact["att"])

    def test_appendix_c_homogeneous_control_condition(self):
        report, artifact = run_appendix_c(k_alpha=0, reps=8, size=(14, 10))
        assert artifact["reference_att"] == 2.0
        assert abs(artifact["overall_mean"] - 2.0) < 0.5

    def test_appendix_d_smoke(self):
        report = run_appendix_d(reps=3, rows=((40, 20, 15, 10),), workers=1)
        row = report.rows.iloc[0]
        assert row["t1"] == 10
        assert np.isfinite(row["dyn_att_bias"])
        assert np.isfinite(row["static_att_bias"])
        assert np.isfinite(row["dyn_psi10_bias"])


@pytest.fixture(scope="module")
def fixture_csv(tmp_path_factory):
    # known-truth fixture: mild factor structure, effect 0.05, small noise
    rng = np.random.default_rng(42)
    n, t, n1, t0 = 30, 16, 6, 8
    f = rng.standard_normal(t)
    lam = rng.uniform(-1, 1, n)
    y = np.outer(lam, f) + 0.1 * rng.standard_normal((n, t))
    y[:n1, t0:] += 0.05
    panel = pl.PanelData(y, frozenset(range(n1)), t0=t0)
    path = tmp_path_factory.mktemp("fixtures") / "known.csv"
    save_panel(panel, path)
    return str(path)


class TestAnalyzeCsv:
    def test_known_truth_recovered(self, fixture_csv):
        frame = analyze_csv(fixture_csv, k=1)
        assert list(frame["estimator"]) == ["ife", "gsc", "sc", "dsc", "sdid"]
        # 2x the rough noise-based standard error for this design
        noise_se_bound = 2 * 0.1 * np.sqrt(2.0 / (6 * 8)) + 0.02
        for _, row in frame.iterrows():
            assert abs(row["att"] - 0.05) < max(noise_se_bound, 0.05), row["estimator"]

    def test_inference_off_leaves_p_empty(self, fixture_csv):
        frame = analyze_csv(fixture_csv, k=1)
        assert frame["p_value"].isna().all()

    def test_inference_on_fills_p(self, fixture_csv):
        frame = analyze_csv(
            fixture_csv, estimators=[("sc", {}), ("sdid", {})],
            inference=True, reps=19, seed=1,
        )
        assert frame["p_value"].between(0, 1).all()
        assert list(frame["statistic"]) == ["mspe_ratio", "abs_att"]

    def test_program_shaped_fixture_runs_all_five(self, tmp_path):
        rng = np.random.default_rng(9)
        n, t, n1, t0 = 148, 20, 13, 7
        f = rng.standard_normal((t, 2))
        lam = rng.uniform(-1, 1, (n, 2))
        y = lam @ f.T + 0.3 * rng.standard_normal((n, t))
        panel = pl.PanelData(y, frozenset(range(n1)), t0=t0)
        path = tmp_path / "program.csv"
        save_panel(panel, path)
        frame = analyze_csv(str(path), k=2)
        assert len(frame) == 5
        assert np.isfinite(frame["att"]).all()


class TestCli:
    def test_analyze_subcommand(self, tmp_path, capsys):
        rng = np.random.default_rng(5)
        panel = pl.PanelData(
            rng.standard_normal((12, 10)), frozenset(range(3)), t0=5
        )
        csv_path = tmp_path / "panel.csv"
        save_panel(panel, csv_path)
        out = tmp_path / "out"
        rc = main([
            "analyze", str(csv_path), "--estimators", "sc,gsc",
            "--k", "1", "--out", str(out),
        ])
        assert rc == 0
        assert (out / "report.csv").exists()
        assert (out / "config.resolved").exists()
        assert "sc" in capsys.readouterr().out

    def test_sweep_subcommand_with_config(self, tmp_path, capsys):
        doc = {
            "dgp": {"design": "HOM", "n": 10, "t": 8, "structural_seed": 1,
                    "noise_seed": 2},
            "estimators": [["sc", {}], ["sdid", {}]],
            "replications": 2,
            "workers": 1,
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(doc))
        out = tmp_path / "sweepout"
        rc = main(["sweep", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0
        assert (out / "report.csv").exists()
        body = capsys.readouterr().out
        assert "sc" in body and "sdid" in body

    def test_sweep_requires_config(self, capsys):
        assert main(["sweep"]) == 2

    def test_appendix_c_subcommand(self, tmp_path, capsys):
        rc = main([
            "appendix-c", "--k-alpha", "0", "--reps", "5",
            "--out", str(tmp_path / "appc"), "--seed", "3",
        ])
        assert rc == 0
        assert (tmp_path / "appc" / "histogram.bins").exists()


def test_generate_dispatch_matches_design():
    for design in ("HOM", "HET", "INV", "DYN"):
        spec = DgpSpec(design=design, n=10, t=8)
        gen = generate(spec, 1)
        mask = treatment_mask(gen.panel)
        assert mask.sum() == gen.panel.n1 * gen.panel.t1

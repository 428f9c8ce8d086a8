"""
Tests for the hdyield command-line interface.
"""

import json

import pandas as pd
import pytest
import yaml
from click.testing import CliRunner

from hdyield.cli import main

BENCH = {"name": "tail", "kind": "linear_tail", "dimension": 2, "n_active": 1, "target_pf": 0.05}


def config_document(**run_overrides):
    run = {
        "n_initial": 20,
        "max_simulations": 0,
        "m_features": 2,
        "selector": "none",
        "reference_size": 1024,
        "estimation_size": 2048,
    }
    run.update(run_overrides)
    return {
        "bench": dict(BENCH),
        "run": run,
        "batch": {"q": 2, "t": 20, "o": 4},
        "train": {"deep": False, "iterations": 10, "restarts": 1},
        "optimizer": {"steps": 2, "n_fantasy": 4},
    }


@pytest.fixture
def runner(tmp_path, monkeypatch):
    monkeypatch.setenv("HDYIELD_CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.delenv("HDYIELD_THREADS", raising=False)
    return CliRunner()


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "experiment.yaml"
    path.write_text(yaml.safe_dump(config_document()))
    return path


class TestMain:
    """Test the command group."""

    def test_help(self, runner):
        """Every subcommand is listed."""
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for command in ("run", "mc", "select", "report"):
            assert command in result.output

    def test_version(self, runner):
        """--version prints the package version."""
        result = runner.invoke(main, ["--version"])
        assert result.exit_code == 0
        assert "0.1.0" in result.output


class TestRunCommand:
    """Test `hdyield run`."""

    def test_zero_budget_run(self, runner, config_file, tmp_path):
        """A zero budget writes one trace row and a complete run directory."""
        out = tmp_path / "run"
        result = runner.invoke(main, ["run", "-c", str(config_file), "-o", str(out)])
        assert result.exit_code == 0, result.output
        trace = pd.read_csv(out / "trace.csv")
        assert len(trace) == 1
        assert trace.n_simulations.iloc[0] == 20
        for name in ("config.yaml", "batches.csv", "selection.csv", "bench.yaml", "checkpoint.json", "manifest.json"):
            assert (out / name).exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "run"
        assert manifest["n_simulations"] == 20

    def test_refuses_existing_trace(self, runner, config_file, tmp_path):
        """A second run into the same directory needs --force."""
        out = tmp_path / "run"
        assert runner.invoke(main, ["run", "-c", str(config_file), "-o", str(out)]).exit_code == 0
        again = runner.invoke(main, ["run", "-c", str(config_file), "-o", str(out)])
        assert again.exit_code == 1
        assert "--force" in again.output
        forced = runner.invoke(main, ["run", "-c", str(config_file), "-o", str(out), "--force"])
        assert forced.exit_code == 0

    def test_seed_override_recorded(self, runner, config_file, tmp_path):
        """--seed fans out into the manifest seeds."""
        out = tmp_path / "seeded"
        result = runner.invoke(main, ["run", "-c", str(config_file), "-o", str(out), "--seed", "100"])
        assert result.exit_code == 0, result.output
        seeds = json.loads((out / "manifest.json").read_text())["seeds"]
        assert seeds["design"] == 100
        assert seeds["mc"] == 105

    def test_unknown_key(self, runner, tmp_path):
        """A misspelled key fails with its path."""
        document = config_document()
        document["batch"]["gama"] = 0.3
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump(document))
        result = runner.invoke(main, ["run", "-c", str(path), "-o", str(tmp_path / "out")])
        assert result.exit_code == 1
        assert "batch.gama" in result.output

    def test_large_dimension_needs_slow(self, runner, tmp_path):
        """Benches above 128 dimensions are refused without --slow."""
        document = config_document()
        document["bench"]["dimension"] = 200
        path = tmp_path / "wide.yaml"
        path.write_text(yaml.safe_dump(document))
        result = runner.invoke(main, ["run", "-c", str(path), "-o", str(tmp_path / "out")])
        assert result.exit_code == 1
        assert "--slow" in result.output


class TestMcCommand:
    """Test `hdyield mc`."""

    def test_runs_and_caches(self, runner, config_file, tmp_path):
        """The second invocation is served from the cache with the same trace."""
        args = ["mc", "-c", str(config_file), "--batch", "200", "--max-n", "20000"]
        first = runner.invoke(main, args + ["-o", str(tmp_path / "mc1")])
        assert first.exit_code == 0, first.output
        second = runner.invoke(main, args + ["-o", str(tmp_path / "mc2")])
        assert second.exit_code == 0, second.output
        assert "served from cache" in second.output
        a = pd.read_csv(tmp_path / "mc1" / "trace.csv")
        b = pd.read_csv(tmp_path / "mc2" / "trace.csv")
        pd.testing.assert_frame_equal(a, b)
        assert json.loads((tmp_path / "mc2" / "manifest.json").read_text())["converged"] is True

    def test_oracle_file(self, runner, config_file, tmp_path):
        """--oracle-n writes an independent oracle estimate."""
        out = tmp_path / "mc"
        result = runner.invoke(main, ["mc", "-c", str(config_file), "-o", str(out), "--batch", "500", "--max-n", "5000", "--oracle-n", "10000"])
        assert result.exit_code == 0, result.output
        oracle = pd.read_csv(out / "oracle.csv")
        assert oracle.n.iloc[0] == 10000
        assert 0.03 < oracle.pf.iloc[0] < 0.07


class TestSelectCommand:
    """Test `hdyield select`."""

    def test_writes_selection(self, runner, tmp_path):
        """HSIC-Lasso picks the tail coordinate out of two."""
        document = config_document(selector="hsic_lasso", m_features=1)
        path = tmp_path / "select.yaml"
        path.write_text(yaml.safe_dump(document))
        out = tmp_path / "sel"
        result = runner.invoke(main, ["select", "-c", str(path), "-o", str(out), "--samples", "200"])
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(out / "selection.csv")
        assert list(frame.columns) == ["dim_index", "alpha", "selected_flag"]
        assert list(frame.selected_flag) == [1, 0]


class TestReportCommand:
    """Test `hdyield report`."""

    def test_report_speedup(self, runner, config_file, tmp_path):
        """The report lists every run and the Monte Carlo speedup."""
        run_dir, mc_dir, report_dir = tmp_path / "run", tmp_path / "mc", tmp_path / "report"
        assert runner.invoke(main, ["run", "-c", str(config_file), "-o", str(run_dir)]).exit_code == 0
        mc = runner.invoke(main, ["mc", "-c", str(config_file), "-o", str(mc_dir), "--batch", "200", "--max-n", "20000"])
        assert mc.exit_code == 0, mc.output
        result = runner.invoke(main, ["report", "--run", str(run_dir), "--mc", str(mc_dir), "-o", str(report_dir)])
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(report_dir / "report.csv")
        assert list(frame.method) == ["run", "mc"]
        n_mc = frame.loc[frame.method == "mc", "n_simulations"].iloc[0]
        assert frame.loc[frame.method == "run", "speedup"].iloc[0] == pytest.approx(n_mc / 20)
        assert frame.loc[frame.method == "mc", "speedup"].iloc[0] == pytest.approx(1.0)

import json

import pytest
from click.testing import CliRunner

from emc.cli import main
from emc.harness import ExperimentConfig, load_series


@pytest.fixture
def runner():
    return CliRunner()


def _short_config(tmp_path, **extra):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"duration_s": 20.0, **extra}))
    return str(path)


def test_run_writes_outputs(runner, tmp_path):
    out = tmp_path / "out"
    res = runner.invoke(main, ["run", "--config", _short_config(tmp_path), "--seed", "3", "--out", str(out)])
    assert res.exit_code == 0, res.output
    csvs = list(out.glob("run_*_s3.csv"))
    assert len(csvs) == 1 and csvs[0].with_suffix(".json").exists()
    prov, t, _ = load_series(csvs[0])
    assert prov["seed"] == "3" and t.size == 2001
    assert "attitude" in res.output


def test_run_bad_arguments(runner, tmp_path):
    assert runner.invoke(main, ["run", "--seed", "-1"]).exit_code != 0
    assert runner.invoke(main, ["run", "--estimator", "kalman"]).exit_code != 0
    res = runner.invoke(main, ["run", "--gamma-a", "1.5", "--out", str(tmp_path)])
    assert res.exit_code != 0 and "gamma_attitude" in res.output


def test_sweep(runner, tmp_path):
    res = runner.invoke(main, ["sweep", "--config", _short_config(tmp_path), "--gammas", "0.02,0.05",
                               "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    doc = json.loads(next(tmp_path.glob("sweep_*.json")).read_text())
    assert set(doc) >= {"dynamic", "static", "config_hash", "seed"}
    assert doc["dynamic"]["gammas"] == [0.02, 0.05]


def test_montecarlo(runner, tmp_path):
    res = runner.invoke(main, ["montecarlo", "--config", _short_config(tmp_path), "-n", "3", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    doc = json.loads(next(tmp_path.glob("montecarlo_*.json")).read_text())
    assert doc["n_runs"] == 3 and doc["n_unstable"] == 0


def test_analyze(runner, tmp_path):
    res = runner.invoke(main, ["analyze", "--corners", "worst", "--points-per-decade", "50", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert "eta" in res.output and "winding numbers of V_m E around -1: [0]" in res.output
    doc = json.loads(next(tmp_path.glob("analyze_dynamic_*.json")).read_text())
    assert doc["corners"][0]["winding_VE"] == 0
    assert next(tmp_path.glob("analyze_dynamic_*_frequency.csv")).stat().st_size > 0


def test_tune(runner):
    res = runner.invoke(main, ["tune", "--gamma-a", "0.05"])
    assert res.exit_code == 0, res.output
    doc = json.loads(res.output)
    assert doc["K"][0] == pytest.approx([0.01, 0.195])
    assert doc["attitude_loop_eigenvalues"] == pytest.approx([0.95] * 3, abs=1e-4)
    assert doc["rate_loop_eigenvalues"] == pytest.approx([0.97] * 3, abs=1e-4)


def test_config_hash_is_stable_in_outputs(runner, tmp_path):
    cfg = _short_config(tmp_path)
    runner.invoke(main, ["run", "--config", cfg, "--out", str(tmp_path)])
    expected = ExperimentConfig.load(cfg).config_hash()
    assert (tmp_path / f"run_{expected}_s0.csv").exists()

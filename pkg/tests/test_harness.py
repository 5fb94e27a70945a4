import json
import math

import numpy as np
import pytest

from emc import analysis as an
from emc.embedded_model import build_case_study_model
from emc.harness import (
    NOMINAL_PARAMS,
    STAT_CHANNELS,
    EstimatorConfig,
    ExperimentConfig,
    ReferenceConfig,
    export_json,
    export_run,
    load_series,
    monte_carlo,
    run_closed_loop,
    sweep_gamma,
)
from emc.noise_estimator import tune_by_eigenvalues
from emc.plant import DesignModelParams, ParamRanges


@pytest.fixture(scope="module")
def nominal_run():
    return run_closed_loop(ExperimentConfig(seed=1))


def test_config_json_round_trip():
    cfg = ExperimentConfig(seed=5, estimator=EstimatorConfig("static", 0.02, 0.05),
                           reference=ReferenceConfig(slews=((10.0, 1.0),)))
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()
    assert cfg.replace(seed=9).config_hash() == cfg.config_hash()
    assert cfg.replace(feedback_gamma=0.2).config_hash() != cfg.config_hash()


def test_config_load(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 3, "estimator": {"kind": "static"}}))
    cfg = ExperimentConfig.load(path)
    assert cfg.seed == 3 and cfg.estimator.kind == "static"
    path.write_text(json.dumps({"sede": 3}))
    with pytest.raises(KeyError, match="sede"):
        ExperimentConfig.load(path)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(duration_s=0.0)
    with pytest.raises(ValueError):
        ExperimentConfig(feedback_gamma=1.0)
    with pytest.raises(ValueError):
        EstimatorConfig("kalman")
    with pytest.raises(ValueError):
        EstimatorConfig(gamma_attitude=0.0)
    with pytest.raises(ValueError):
        ExperimentConfig(u_max=0.05)
    with pytest.raises(ValueError):
        ExperimentConfig(reference=ReferenceConfig(j_max=0.5))
    with pytest.raises(ValueError):
        ExperimentConfig(params=DesignModelParams(dJ=0.5, allow_out_of_range=True))
    cfg = ExperimentConfig(u_max=0.05, params=DesignModelParams(dJ=0.5, allow_out_of_range=True), allow_out_of_range=True)
    assert cfg.params.dJ == 0.5


def test_run_shape_and_stats(nominal_run):
    r = nominal_run
    assert r.t.size == 40001 and not r.unstable and r.steps_completed == 40001
    assert set(STAT_CHANNELS) <= set(r.stats)
    e = r.series["e_true_q"]
    assert r.stat("e_true_q") == pytest.approx(math.sqrt(np.mean(e**2)))
    q = r.series["e_model_q"]
    assert r.stats["e_model_q"]["full"]["count"] == 4001 == np.sum(~np.isnan(q))
    assert r.params == NOMINAL_PARAMS


def test_seed_determinism():
    cfg = ExperimentConfig(duration_s=50.0)
    a, b = run_closed_loop(cfg, 7), run_closed_loop(cfg, 7)
    for name in a.series:
        assert a.series[name].tobytes() == b.series[name].tobytes()
    c = run_closed_loop(cfg, 8)
    assert c.series["q_meas"].tobytes() != a.series["q_meas"].tobytes()


def test_export_round_trip(nominal_run, tmp_path):
    csv_path, json_path = export_run(nominal_run, tmp_path)
    with open(csv_path) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == f"# config_hash={nominal_run.config_hash} seed=1"
    assert len(lines) == 2 + 40001
    assert lines[1].startswith("t_s,q_ref,q_true,q_meas,w_meas,q_hat,w_hat,sg_hat,a_hat,u_cmd,e_track_true,"
                               "e_track_post,e_model,sat_flag")
    prov, t, series = load_series(csv_path)
    assert prov == {"config_hash": nominal_run.config_hash, "seed": "1"}
    for name in STAT_CHANNELS:
        np.testing.assert_array_equal(series[name], nominal_run.series[name])
    doc = json.loads(json_path.read_text())
    assert doc["config_hash"] == nominal_run.config_hash and doc["seed"] == 1
    assert doc["stats"] == json.loads(json.dumps(nominal_run.stats))
    assert ExperimentConfig.from_dict(doc["config"]) == nominal_run.config


def test_export_unwritable(nominal_run, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="cannot write"):
        export_run(nominal_run, blocker / "sub")


def test_export_json(tmp_path):
    cfg = ExperimentConfig(seed=4)
    path = export_json({"eta": np.float64(1.5), "v": np.arange(3)}, tmp_path / "a" / "r.json", cfg)
    doc = json.loads(path.read_text())
    assert doc["eta"] == 1.5 and doc["v"] == [0, 1, 2] and doc["seed"] == 4
    assert doc["config_hash"] == cfg.config_hash()


def test_a_posteriori_error_far_below_true_error(nominal_run):
    s = nominal_run.series
    tail = nominal_run.t >= 300
    assert np.sqrt(np.mean(s["e_post_q"][tail] ** 2)) * 10 < np.sqrt(np.mean(s["e_true_q"][tail] ** 2))


def test_attitude_bias_reaches_tracking_error(nominal_run):
    # the model follows the biased measurement, so the mean tracking error plus mean model error is the bias
    s = nominal_run.series
    sampled = ~np.isnan(s["e_model_q"])
    total = np.mean(s["e_true_q"][sampled] + s["e_model_q"][sampled])
    assert total == pytest.approx(nominal_run.config.attitude_sensor.bias, rel=0.1)


def test_noise_rms_prediction_order_of_magnitude(nominal_run):
    model = build_case_study_model()
    sys = an.case_study_error_system(model, tune_by_eigenvalues(model, "dynamic", 0.03, 0.03), "attitude")
    pred = an.noise_rms_prediction(sys, 0.5e-3)
    tail = nominal_run.t >= 300
    measured = np.nanstd(nominal_run.series["e_true_q"][tail])
    assert pred / 3 < measured < pred * 3


def test_unstable_run_is_flagged():
    cfg = ExperimentConfig(duration_s=20.0, blowup_threshold=1e-9)
    r = run_closed_loop(cfg, 0)
    assert r.unstable and r.steps_completed < r.t.size
    assert np.all(np.isnan(r.series["u_cmd"][r.steps_completed:]))


def test_sweep(tmp_path):
    cfg = ExperimentConfig(duration_s=30.0)
    out = sweep_gamma(cfg, [0.05, 0.01], kinds=("dynamic",), joint=False)
    res = out["dynamic"]
    assert list(res.gammas) == [0.01, 0.05] and not res.joint
    assert res.command_rms.shape == (2,) and not np.any(res.unstable)
    json.dumps(res.to_dict())
    with pytest.raises(ValueError):
        sweep_gamma(cfg, [0.01, 0.01])
    with pytest.raises(ValueError):
        sweep_gamma(cfg, [0.0, 0.5])


def test_monte_carlo_single_point_equals_run():
    point = ParamRanges((0.2, 0.2), (18.0, 18.0), (0.011, 0.011), (40.0, 40.0))
    cfg = ExperimentConfig(duration_s=40.0, ranges=point)
    mc = monte_carlo(cfg, 1, master_seed=12)
    direct = run_closed_loop(cfg, mc.seeds[0], mc.params[0])
    assert mc.params[0] == NOMINAL_PARAMS
    assert mc.metrics["attitude_rms"][0] == direct.stat("e_true_q")
    assert mc.n_runs == 1 and mc.n_unstable == 0


def test_monte_carlo_deterministic_and_worker_independent():
    cfg = ExperimentConfig(duration_s=20.0)
    a = monte_carlo(cfg, 4, master_seed=3)
    b = monte_carlo(cfg, 4, master_seed=3, workers=2)
    assert a.seeds == b.seeds and a.params == b.params
    for k in a.metrics:
        np.testing.assert_array_equal(a.metrics[k], b.metrics[k])
    assert len(set(a.seeds)) == 4
    d = a.to_dict()
    assert d["n_runs"] == 4 and set(d["quantiles"]["attitude_rms"]) == {"q05", "q50", "q95", "max"}
    with pytest.raises(ValueError):
        monte_carlo(cfg, 0)

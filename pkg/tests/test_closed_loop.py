import numpy as np
import pytest

from emc.closed_loop import COLUMNS, closed_loop_kernel, col, gain_vector, run_modular
from emc.harness import ExperimentConfig, EstimatorConfig, ReferenceConfig, build_loop, run_closed_loop


def _compare(config, n, seed):
    loop = build_loop(config)
    x_ref, u_ref, d = loop.x_ref[:n], loop.u_ref[:n], loop.d_exo[:n]
    fast = run_closed_loop(config.replace(duration_s=(n - 1) * config.dt), seed)
    slow = run_modular(loop.model, loop.law, loop.estimator, loop.plant, x_ref, u_ref, d, np.random.default_rng(seed))
    for name in COLUMNS:
        a, b = fast.series[name], slow[:, col(name)]
        np.testing.assert_array_equal(np.isnan(a), np.isnan(b), err_msg=name)
        ok = ~np.isnan(a)
        scale = max(1.0, np.max(np.abs(b[ok]))) if ok.any() else 1.0
        np.testing.assert_allclose(a[ok], b[ok], rtol=0, atol=1e-9 * scale, err_msg=name)


@pytest.mark.parametrize("kind", ["dynamic", "static"])
def test_kernel_matches_modular_loop(kind):
    cfg = ExperimentConfig(estimator=EstimatorConfig(kind), reference=ReferenceConfig(slews=((0.5, 0.05),)))
    _compare(cfg, 1500, 11)


def test_kernel_matches_modular_loop_under_saturation():
    cfg = ExperimentConfig(u_max=1e-4, reference=ReferenceConfig(slews=((0.2, 0.5),), a_max=1e-4, j_max=1e-3))
    _compare(cfg, 800, 3)
    assert np.nansum(run_closed_loop(cfg.replace(duration_s=7.99), 3).series["sat_flag"]) > 0


def test_gain_vector_layout(law, dyn_est, static_est):
    g = gain_vector(law, dyn_est)
    assert g[2] == 0.0 and g[3] == dyn_est.l_q and np.all(g[8:] == dyn_est.L_g)
    g = gain_vector(law, static_est)
    assert g[2] == 1.0 and np.all(g[6:8] == static_est.L_q)
    with pytest.raises(TypeError):
        gain_vector(law, object())


def test_blowup_stops_kernel():
    loop = build_loop(ExperimentConfig())
    n = 200
    gains = gain_vector(loop.law, loop.estimator)
    gains[8] = -50.0  # destabilise the rate channel
    rec, done = closed_loop_kernel(loop.plant.sys.A, loop.plant.sys.B, np.zeros((n, 3)), loop.d_exo[:n],
                                   loop.x_ref[:n], loop.u_ref[:n], gains, np.array([0, 0, 1e-3, 0, 0.0]),
                                   np.array([40.0, 0.2, 18.0, 0.011]), 10, 0.01, 1.0, 1e6, np.zeros(4), np.zeros(5))
    assert done < n
    assert np.all(np.isnan(rec[done:]))

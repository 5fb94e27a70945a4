"""Compiled closed-loop kernel for the single-axis case study.

The kernel runs the full loop at the base rate::

    measure -> model error (multi-rate) -> noise estimate -> command
            -> model step -> plant step

on pre-generated standard normals, so it is bit-reproducible and matches
:func:`run_modular`, which performs the same loop through the public
step functions of the package.  Model quantities are in per-step units;
recorded channels are converted to SI.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .control import ControlLaw, command, record_errors
from .embedded_model import EmbeddedModel, MultiRateSchedule, model_error, step_model
from .noise_estimator import CaseStudyEstimator, StaticEstimator, estimate_case_study, estimate_static
from .plant import Plant, PlantState, measure, step_plant, transmitted_acceleration, true_disturbance

__all__ = ["COLUMNS", "col", "gain_vector", "closed_loop_kernel", "run_modular"]

# Recorded channels, one row per step (SI units).
COLUMNS = (
    "q_ref", "w_ref", "q_true", "theta", "w_true", "q_meas", "w_meas",
    "q_hat", "w_hat", "sg_hat", "a_hat", "s_hat", "u_cmd", "sat_flag",
    "e_post_q", "e_post_w", "e_model_q", "e_model_w", "e_true_q", "e_true_w",
    "e_ctrl_q", "e_ctrl_w", "d_true", "a_transmitted",
)
_IDX = {name: k for k, name in enumerate(COLUMNS)}


def col(name):
    return _IDX[name]


def gain_vector(law: ControlLaw, est):
    """Pack gains as ``[k_q, k_w, kind, l_q, m_q, beta_q, Lq1, Lq2, Lg1, Lg2, Lg3]``."""
    g = np.zeros(11)
    g[0:2] = law.K[0]
    if isinstance(est, CaseStudyEstimator):
        g[2] = 0.0
        g[3:6] = est.l_q, est.m_q, est.beta_q
    elif isinstance(est, StaticEstimator):
        g[2] = 1.0
        g[6:8] = est.L_q
    else:
        raise TypeError(f"unsupported estimator {type(est).__name__}")
    g[8:11] = est.L_g
    return g


@njit(cache=True)
def closed_loop_kernel(Ad, Bd, z, d_exo, x_ref, u_ref, gains, sens, phys, n_q, dt, u_max, blowup, x0, xh0):
    """Run ``x_ref.shape[0]`` steps; returns ``(record, steps_completed)``.

    ``z`` has rows ``(gyro noise, attitude noise, drift increment)``.
    ``sens = [att_bias, att_noise, gyro_bias, gyro_noise, drift_rms]``,
    ``phys = [tau, dJ, omega_f, zeta_f]``.  ``u_max`` is per-step.
    """
    n = x_ref.shape[0]
    out = np.full((n, 24), np.nan)
    x = x0.copy()
    xn = np.zeros(4)
    q, w, sg, a, s = xh0[0], xh0[1], xh0[2], xh0[3], xh0[4]
    drift = 0.0
    p = 0.0
    k_q, k_w = gains[0], gains[1]
    static = gains[2] > 0.5
    tau, dJ, wf, zf = phys[0], phys[1], phys[2], phys[3]
    dt2 = dt * dt
    for i in range(n):
        sampled = i % n_q == 0
        y_g = (x[1] + sens[2] + drift + sens[3] * z[i, 0]) * dt
        y_q = x[2] + sens[0] + sens[1] * z[i, 1]
        e_g = y_g - w
        e_q = y_q - q

        w_q = 0.0
        w_g = 0.0
        if sampled:
            if static:
                w_q = gains[6] * e_q
                w_g = gains[7] * e_q
            else:
                w_g = gains[3] * e_q + gains[4] * p
                p = (1.0 - gains[5]) * p + e_q
        w_u = gains[8] * e_g
        w_a = gains[9] * e_g
        w_s = gains[10] * e_g

        eh_q = x_ref[i, 0] - q
        eh_w = x_ref[i, 1] - w - sg
        u_raw = u_ref[i] + k_q * eh_q + k_w * eh_w - a
        u = min(max(u_raw, -u_max), u_max)

        r = out[i]
        r[0] = x_ref[i, 0]
        r[1] = x_ref[i, 1] / dt
        r[2] = x[2]
        r[3] = x[0]
        r[4] = x[1]
        if sampled:
            r[5] = y_q
            r[16] = e_q
            r[20] = x_ref[i, 0] - (y_q + 0.0)
        r[6] = y_g / dt
        r[7] = q
        r[8] = w / dt
        r[9] = sg / dt
        r[10] = a / dt2
        r[11] = s / (dt2 * dt)
        r[12] = u / dt2
        r[13] = 1.0 if u != u_raw else 0.0
        r[14] = eh_q
        r[15] = eh_w / dt
        r[17] = e_g / dt
        r[18] = x_ref[i, 0] - x[2]
        r[19] = x_ref[i, 1] / dt - x[1]
        r[21] = (x_ref[i, 1] - (y_g + sg)) / dt
        a_u = u / dt2
        r[22] = d_exo[i] - x[1] / tau + a_u * (1.0 / (1.0 + dJ) - 1.0)
        r[23] = wf * wf * (x[0] - x[2]) - 2.0 * zf * wf * x[3]

        # model step
        q_n = q + w + 0.5 * u + sg + 0.5 * a + w_q
        w_n = w + u + a + w_u
        sg = sg + w_g
        a = a + s + w_a
        s = s + w_s
        q = q_n
        w = w_n

        # plant step
        for j in range(4):
            acc = Bd[j, 0] * a_u + Bd[j, 1] * d_exo[i]
            for k in range(4):
                acc += Ad[j, k] * x[k]
            xn[j] = acc
        x[:] = xn
        drift += sens[4] * z[i, 2]

        big = abs(q) + abs(w) + abs(sg) + abs(a) + abs(s)
        for j in range(4):
            big += abs(x[j])
        if not big < blowup:
            return out, i + 1
    return out, n


def run_modular(model: EmbeddedModel, law: ControlLaw, est, plant: Plant, x_ref, u_ref, d_exo, rng, x0=None):
    """Reference implementation of the kernel built from the package step functions.

    Slow; intended for cross-checking.  ``rng`` must be fresh so its stream
    lines up with the kernel's ``(gyro, attitude, drift)`` rows.
    """
    dt = plant.dt
    n = len(u_ref)
    sched = MultiRateSchedule(dt, (plant.n_q, 1))
    static = isinstance(est, StaticEstimator)
    state = model.zero_state()
    pstate = PlantState(np.zeros(4) if x0 is None else np.array(x0, dtype=float))
    y_si = measure(plant, pstate, rng)
    p = 0.0
    out = np.full((n, len(COLUMNS)), np.nan)
    for i in range(n):
        y = np.ma.masked_array([y_si.data[0], y_si.data[1] * dt], mask=y_si.mask)
        e = model_error(y, model.C_c @ state.x_c, sched, i)
        e_q = None if e.mask[0] else float(e[0])
        if static:
            w = estimate_static(est, e_q, float(e[1]), i)
        else:
            w, p = estimate_case_study(est, e_q, float(e[1]), i, p)
        u, sat = command(law, x_ref[i], u_ref[i], state)
        rec = record_errors(model, law, x_ref[i], state, y, y_true=[pstate.x[2], pstate.x[1] * dt])

        r = out[i]
        r[_IDX["q_ref"]], r[_IDX["w_ref"]] = x_ref[i, 0], x_ref[i, 1] / dt
        r[_IDX["q_true"]], r[_IDX["theta"]], r[_IDX["w_true"]] = pstate.x[2], pstate.x[0], pstate.x[1]
        if e_q is not None:
            r[_IDX["q_meas"]] = y[0]
            r[_IDX["e_model_q"]] = rec.e_model[0]
            r[_IDX["e_ctrl_q"]] = rec.e_control[0]
        r[_IDX["w_meas"]] = y[1] / dt
        r[_IDX["q_hat"]], r[_IDX["w_hat"]] = state.x_c[0], state.x_c[1] / dt
        r[_IDX["sg_hat"]] = state.x_d[0] / dt
        r[_IDX["a_hat"]] = state.x_d[1] / dt**2
        r[_IDX["s_hat"]] = state.x_d[2] / dt**3
        r[_IDX["u_cmd"]] = u[0] / dt**2
        r[_IDX["sat_flag"]] = float(sat)
        r[_IDX["e_post_q"]], r[_IDX["e_post_w"]] = rec.e_post[0], rec.e_post[1] / dt
        r[_IDX["e_model_w"]] = rec.e_model[1] / dt
        r[_IDX["e_true_q"]], r[_IDX["e_true_w"]] = rec.e_true[0], rec.e_true[1] / dt
        r[_IDX["e_ctrl_w"]] = rec.e_control[1] / dt
        r[_IDX["d_true"]] = true_disturbance(plant.params, pstate.x[1], u[0] / dt**2, d_exo[i])
        r[_IDX["a_transmitted"]] = transmitted_acceleration(plant.params, pstate.x)

        state, _ = step_model(model, state, u, w)
        pstate, y_si = step_plant(plant, pstate, u[0] / dt**2, d_exo[i], rng)
    return out

"""Command line interface: ``python -m emc <command>`` or the ``emc`` script."""

from __future__ import annotations

import functools
import json
import time
from pathlib import Path

import click
import numpy as np

from . import analysis
from .control import design_control_law
from .embedded_model import build_case_study_model
from .harness import EstimatorConfig, ExperimentConfig, export_json, export_run, monte_carlo, run_closed_loop, sweep_gamma
from .noise_estimator import attitude_loop_matrix, rate_loop_matrix, tune_by_eigenvalues
from .plant import worst_corner

DEFAULT_GAMMAS = "0.005,0.01,0.02,0.03,0.05,0.1"


def _config_options(fn):
    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON configuration file.")
    @click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Random seed (unsigned 64-bit).")
    @click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Output directory.")
    @click.option("--estimator", type=click.Choice(["dynamic", "static"]), help="Noise estimator design.")
    @click.option("--gamma-a", type=float, help="Attitude-channel complementary eigenvalue.")
    @click.option("--gamma-r", type=float, help="Rate-channel complementary eigenvalue.")
    @functools.wraps(fn)
    def wrapper(config_path, seed, out_dir, estimator, gamma_a, gamma_r, **kwargs):
        cfg = ExperimentConfig.load(config_path) if config_path else ExperimentConfig()
        est = cfg.estimator
        try:
            est = EstimatorConfig(estimator or est.kind,
                                  est.gamma_attitude if gamma_a is None else gamma_a,
                                  est.gamma_rate if gamma_r is None else gamma_r)
        except ValueError as exc:
            raise click.BadParameter(str(exc)) from exc
        changes = {"estimator": est}
        if seed is not None:
            changes["seed"] = seed
        if out_dir is not None:
            changes["out_dir"] = out_dir
        return fn(cfg.replace(**changes), **kwargs)

    return wrapper


@click.group()
def main():
    """Embedded-model attitude control experiments."""


@main.command()
@_config_options
def run(cfg):
    """Run one closed loop and export its time series and statistics."""
    t0 = time.perf_counter()
    r = run_closed_loop(cfg)
    elapsed = time.perf_counter() - t0
    csv_path, json_path = export_run(r)
    click.echo(f"config {r.config_hash} seed {r.seed}  {r.steps_completed} steps in {elapsed:.2f} s"
               + ("  UNSTABLE" if r.unstable else ""))
    for label, ch, scale, unit in (("attitude", "e_true_q", 1e3, "mrad"), ("rate", "e_true_w", 1e3, "mrad/s")):
        s = r.stats[ch]["full"]
        click.echo(f"  {label:8s} max {s['max_abs'] * scale:.4f}  rms {s['rms'] * scale:.4f}  mean {s['mean'] * scale:.4f} {unit}")
    click.echo(f"  command  rms(tail) {r.stat('u_cmd', 'tail'):.3e} rad/s^2  saturated {r.saturated_fraction:.2%}")
    click.echo(f"wrote {csv_path}\nwrote {json_path}")


@main.command()
@_config_options
@click.option("--gammas", default=DEFAULT_GAMMAS, show_default=True, help="Comma-separated gamma values.")
@click.option("--attitude-only", is_flag=True, help="Sweep the attitude channel only (rate channel fixed).")
def sweep(cfg, gammas, attitude_only):
    """Sweep the estimator eigenvalues for both designs."""
    values = [float(g) for g in gammas.split(",") if g.strip()]
    res = sweep_gamma(cfg, values, joint=not attitude_only)
    click.echo(f"{'kind':8s} {'gamma':>7s} {'att rms':>9s} {'rate rms':>9s} {'cmd rms':>10s} {'transm rms':>10s}  flags")
    for kind, sr in res.items():
        for k, g in enumerate(sr.gammas):
            flag = "unstable" if sr.unstable[k] else (f"sat {sr.saturated_fraction[k]:.1%}" if sr.saturated_fraction[k] else "")
            click.echo(f"{kind:8s} {g:7.3f} {sr.attitude_rms[k] * 1e3:9.4f} {sr.rate_rms[k] * 1e3:9.4f} "
                       f"{sr.command_rms[k]:10.3e} {sr.transmitted_rms[k]:10.3e}  {flag}")
    path = export_json({kind: sr.to_dict() for kind, sr in res.items()},
                       Path(cfg.out_dir) / f"sweep_{cfg.config_hash()}_s{cfg.seed}.json", cfg)
    click.echo(f"wrote {path}")


@main.command()
@_config_options
@click.option("-n", "--runs", "n_runs", default=100, show_default=True, type=click.IntRange(1))
@click.option("--workers", default=1, show_default=True, type=click.IntRange(1))
def montecarlo(cfg, n_runs, workers):
    """Monte Carlo campaign over the parameter ranges."""
    t0 = time.perf_counter()
    res = monte_carlo(cfg, n_runs, workers=workers)
    click.echo(f"{n_runs} runs in {time.perf_counter() - t0:.1f} s: {res.n_unstable} unstable, "
               f"{res.n_saturating} saturating")
    for name, q in res.quantiles().items():
        click.echo(f"  {name:18s} " + "  ".join(f"{k} {v:.4g}" for k, v in q.items()))
    path = export_json(res.to_dict(), Path(cfg.out_dir) / f"montecarlo_{cfg.config_hash()}_s{cfg.seed}.json", cfg)
    click.echo(f"wrote {path}")


@main.command()
@_config_options
@click.option("--corners", type=click.Choice(["worst", "all"]), default="all", show_default=True)
@click.option("--points-per-decade", default=400, show_default=True, type=click.IntRange(10))
def analyze(cfg, corners, points_per_decade):
    """Sensitivity and small-gain report of the attitude channel."""
    est_cfg = cfg.estimator
    model = build_case_study_model(parasitic=est_cfg.kind == "static")
    est = tune_by_eigenvalues(model, est_cfg.kind, est_cfg.gamma_attitude, est_cfg.gamma_rate)
    sys = analysis.case_study_error_system(model, est, "attitude", cfg.dt)
    grid = analysis.log_grid(1e-5, sys.f_max, points_per_decade)
    plist = [worst_corner(cfg.params.J0)] if corners == "worst" else cfg.ranges.corners(cfg.params.J0)
    rep = analysis.small_gain_check(sys, plist, grid)
    S, V = analysis.sensitivities(sys, grid)
    slope = analysis.low_frequency_slope(grid.f_hz, S[:, 0, 0])
    doc = rep.to_dict()
    doc["sensitivity_low_frequency_slope"] = slope
    doc["predictor_spectral_radius"] = sys.spectral_radius
    out = Path(cfg.out_dir)
    stem = f"analyze_{est_cfg.kind}_{cfg.config_hash()}"
    path = export_json(doc, out / f"{stem}.json", cfg)
    rows = [(grid.f_hz, "-", "S_m", S[:, 0, 0]), (grid.f_hz, "-", "V_m", V[:, 0, 0])]
    rows += [(f, k, ch, vals) for f, k, ch, vals in rep.nyquist]
    analysis.write_frequency_csv(out / f"{stem}_frequency.csv", rows)
    click.echo(f"channel {rep.channel} (f_max {rep.f_max:g} Hz), {len(plist)} corner(s), {rep.grid_points} grid points")
    click.echo(f"  eta = {rep.eta:.4g}  small-gain {'PASS' if rep.passed else 'FAIL (sufficient condition only)'}")
    click.echo(f"  max |V_m E| = {rep.max_VE:.4g}  {'PASS' if rep.passed_VE else 'FAIL'}")
    for label, attr in (("V_m dE", "winding_VdE"), ("V_m E", "winding_VE")):
        click.echo(f"  winding numbers of {label} around -1: {sorted({getattr(c, attr) for c in rep.corners})}")
    click.echo(f"  |S_m| low-frequency slope {slope:.3f} decades/decade")
    click.echo(f"wrote {path}")


@main.command()
@_config_options
def tune(cfg):
    """Print feedback and estimator gains for the configured eigenvalues."""
    est_cfg = cfg.estimator
    model = build_case_study_model(parasitic=est_cfg.kind == "static")
    est = tune_by_eigenvalues(model, est_cfg.kind, est_cfg.gamma_attitude, est_cfg.gamma_rate)
    law = design_control_law(model, cfg.feedback_gamma)
    doc = {
        "feedback_gamma": cfg.feedback_gamma,
        "K": law.K.tolist(),
        "Q": law.Q.tolist(),
        "M_c": law.M_c.tolist(),
        "estimator": est.to_dict(),
        "attitude_loop_eigenvalues": sorted(abs(np.linalg.eigvals(attitude_loop_matrix(model, est))).tolist()),
        "rate_loop_eigenvalues": sorted(abs(np.linalg.eigvals(rate_loop_matrix(model, est))).tolist()),
    }
    click.echo(json.dumps(doc, indent=2))


if __name__ == "__main__":
    main()

"""Experiment orchestration: configuration, closed-loop runs, sweeps, Monte Carlo, export.

Runs are deterministic functions of ``(config, seed)``.  Noise comes from
``numpy.random.default_rng(seed)`` drawn as one block of standard normals,
and the loop itself is a compiled kernel (see :mod:`emc.closed_loop`), so two
runs on the same platform produce identical bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .closed_loop import COLUMNS, closed_loop_kernel, col, gain_vector
from .control import ReferenceProfile, Slew, design_control_law
from .embedded_model import build_case_study_model
from .noise_estimator import tune_by_eigenvalues
from .plant import (
    ATTITUDE_SENSOR,
    GYRO,
    DesignModelParams,
    DisturbanceProfile,
    ParamRanges,
    SensorModel,
    disturbance_profile,
    make_plant,
    sample_params,
)

__all__ = [
    "EstimatorConfig",
    "ReferenceConfig",
    "ExperimentConfig",
    "RunResult",
    "SweepResult",
    "MonteCarloResult",
    "NOMINAL_PARAMS",
    "build_loop",
    "run_closed_loop",
    "compute_stats",
    "sweep_gamma",
    "monte_carlo",
    "export_run",
    "load_series",
    "export_json",
    "STAT_CHANNELS",
]

# Centre of the uncertainty box, with the inertia error at its upper edge.
NOMINAL_PARAMS = DesignModelParams(dJ=0.2, omega_f=18.0, zeta_f=0.011, tau=40.0)
COMMAND_BOUND = 0.025  # rad/s**2
SLEW_RATE_BOUND = 0.25  # rad/s**3

# Channels summarised in the statistics (SI units: rad, rad/s, rad/s**2).
STAT_CHANNELS = (
    "e_true_q", "e_true_w", "e_post_q", "e_post_w", "e_model_q", "e_model_w",
    "u_cmd", "a_transmitted",
)


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str = "dynamic"
    gamma_attitude: float = 0.03
    gamma_rate: float = 0.03

    def __post_init__(self):
        if self.kind not in ("dynamic", "static"):
            raise ValueError(f"estimator kind must be 'dynamic' or 'static', got {self.kind!r}")
        for name in ("gamma_attitude", "gamma_rate"):
            g = getattr(self, name)
            if not 0.0 < g < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {g}")


@dataclass(frozen=True)
class ReferenceConfig:
    """Rest-to-rest slews as ``(start time s, target rad)`` pairs plus profile bounds."""

    slews: tuple = ((100.0, math.pi), (200.0, 2 * math.pi))
    a_max: float = 0.005
    j_max: float = 0.0025
    q0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "slews", tuple((float(t), float(q)) for t, q in self.slews))

    def profile(self, dt):
        return ReferenceProfile([Slew(t, q) for t, q in self.slews], a_max=self.a_max, j_max=self.j_max,
                                dt=dt, q0=self.q0)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a closed-loop experiment depends on.

    ``u_max`` is the command bound (rad/s**2).  Physical values outside the
    admissible envelopes are rejected unless ``allow_out_of_range`` is set.
    """

    duration_s: float = 400.0
    dt: float = 0.01
    seed: int = 0
    params: DesignModelParams = NOMINAL_PARAMS
    ranges: ParamRanges = ParamRanges()
    estimator: EstimatorConfig = EstimatorConfig()
    feedback_gamma: float = 0.1
    u_max: float = COMMAND_BOUND
    reference: ReferenceConfig = ReferenceConfig()
    disturbance: DisturbanceProfile = DisturbanceProfile()
    attitude_sensor: SensorModel = ATTITUDE_SENSOR
    gyro: SensorModel = GYRO
    blowup_threshold: float = 1e6
    tail_start_s: float = 300.0
    slew_window_s: tuple = (100.0, 300.0)
    out_dir: str = "runs"
    allow_out_of_range: bool = False

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError("duration must be positive")
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if not 0.0 < self.feedback_gamma < 1.0:
            raise ValueError(f"feedback_gamma must lie in (0, 1), got {self.feedback_gamma}")
        if not self.u_max > 0 or not self.reference.a_max > 0 or not self.reference.j_max > 0:
            raise ValueError("bounds must be positive")
        if self.params.allow_out_of_range != self.allow_out_of_range:
            p = self.params
            object.__setattr__(self, "params", DesignModelParams(p.J0, p.dJ, p.omega_f, p.zeta_f, p.tau,
                                                                 allow_out_of_range=self.allow_out_of_range))
        if not self.allow_out_of_range:
            if self.u_max > COMMAND_BOUND * (1 + 1e-12):
                raise ValueError(f"command bound above {COMMAND_BOUND} rad/s^2 needs allow_out_of_range")
            if self.reference.a_max > self.u_max * (1 + 1e-12):
                raise ValueError("reference acceleration above the command bound needs allow_out_of_range")
            if self.reference.j_max > SLEW_RATE_BOUND * (1 + 1e-12):
                raise ValueError(f"reference slew rate above {SLEW_RATE_BOUND} rad/s^3 needs allow_out_of_range")
        object.__setattr__(self, "slew_window_s", tuple(float(x) for x in self.slew_window_s))

    @property
    def n_steps(self):
        return int(round(self.duration_s / self.dt))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["params"] = self.params.as_dict()
        d["ranges"] = {k: list(v) for k, v in dataclasses.asdict(self.ranges).items()}
        d["reference"]["slews"] = [list(s) for s in self.reference.slews]
        d["slew_window_s"] = list(self.slew_window_s)
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise KeyError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        allow_out_of_range = bool(data.get("allow_out_of_range", False))
        sub = {
            "params": lambda d: DesignModelParams(**d, allow_out_of_range=allow_out_of_range),
            "ranges": lambda d: ParamRanges(**{k: tuple(v) for k, v in d.items()}),
            "estimator": lambda d: EstimatorConfig(**d),
            "reference": lambda d: ReferenceConfig(**{k: (tuple(map(tuple, v)) if k == "slews" else v)
                                                      for k, v in d.items()}),
            "disturbance": lambda d: DisturbanceProfile(**d),
            "attitude_sensor": lambda d: SensorModel(**d),
            "gyro": lambda d: SensorModel(**d),
        }
        for key, make in sub.items():
            if key in data and isinstance(data[key], dict):
                data[key] = make(data[key])
        if "slew_window_s" in data:
            data["slew_window_s"] = tuple(data["slew_window_s"])
        return cls(**data)

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())

    def config_hash(self):
        """SHA-256 prefix of the canonical configuration (seed and output directory excluded)."""
        d = self.to_dict()
        d.pop("seed")
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Loop:
    model: object
    estimator: object
    law: object
    plant: object
    x_ref: np.ndarray
    u_ref: np.ndarray
    d_exo: np.ndarray


def build_loop(config: ExperimentConfig, params: Optional[DesignModelParams] = None):
    """Model, tuned estimator, control law, plant and input sequences of one run."""
    dt = config.dt
    est_cfg = config.estimator
    model = build_case_study_model(parasitic=est_cfg.kind == "static")
    plant = make_plant(config.params if params is None else params, dt, config.attitude_sensor, config.gyro)
    est = tune_by_eigenvalues(model, est_cfg.kind, est_cfg.gamma_attitude, est_cfg.gamma_rate, plant.n_q)
    law = design_control_law(model, config.feedback_gamma, u_max=config.u_max * dt * dt)
    n = config.n_steps + 1
    x_ref, u_ref = config.reference.profile(dt).sequence(n)
    d_exo = np.asarray(disturbance_profile(config.disturbance, np.arange(n) * dt), dtype=float)
    return Loop(model, est, law, plant, x_ref, u_ref, d_exo)


def _windows(config, t):
    lo, hi = config.slew_window_s
    return {
        "full": np.ones(t.size, dtype=bool),
        "tail": t >= config.tail_start_s,
        "slew": (t >= lo) & (t < hi),
    }


def compute_stats(series, t, windows):
    """Per channel and window: max |x|, RMS, mean and sample count over non-NaN samples."""
    out = {}
    for name in STAT_CHANNELS:
        x = np.asarray(series[name], dtype=float)
        out[name] = {}
        for wname, mask in windows.items():
            v = x[mask & ~np.isnan(x)]
            if v.size == 0:
                out[name][wname] = {"max_abs": math.nan, "rms": math.nan, "mean": math.nan, "count": 0}
                continue
            out[name][wname] = {
                "max_abs": float(np.max(np.abs(v))),
                "rms": float(np.sqrt(np.mean(v * v))),
                "mean": float(np.mean(v)),
                "count": int(v.size),
            }
    return out


@dataclass
class RunResult:
    """Time series (SI units), statistics and provenance of one closed-loop run."""

    config: ExperimentConfig
    seed: int
    params: DesignModelParams
    t: np.ndarray
    series: dict
    steps_completed: int
    unstable: bool
    stats: dict = field(default_factory=dict)

    @property
    def config_hash(self):
        return self.config.config_hash()

    @property
    def saturated_fraction(self):
        sat = self.series["sat_flag"]
        return float(np.nansum(sat) / max(1, self.steps_completed))

    def stat(self, channel, window="full", key="rms"):
        return self.stats[channel][window][key]

    def summary(self):
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "params": self.params.as_dict(),
            "steps_completed": self.steps_completed,
            "unstable": self.unstable,
            "saturated_fraction": self.saturated_fraction,
            "stats": self.stats,
        }


def _noise_block(seed, n):
    return np.random.default_rng(seed).standard_normal(n * 3).reshape(n, 3)


def run_closed_loop(config: ExperimentConfig, seed=None, params=None):
    """Simulate one closed loop for ``config.duration_s`` seconds.

    ``seed`` defaults to ``config.seed``; ``params`` overrides
    ``config.params`` (used by Monte Carlo).  Records ``n_steps + 1`` rows.
    A run whose states exceed ``config.blowup_threshold`` stops early and is
    flagged unstable; the remaining rows are NaN.
    """
    seed = config.seed if seed is None else int(seed)
    params = config.params if params is None else params
    loop = build_loop(config, params)
    plant = loop.plant
    n = loop.u_ref.size
    z = _noise_block(seed, n)
    sens = np.array([plant.attitude.bias, plant.attitude.noise_rms, plant.gyro.bias,
                     plant.gyro.noise_rms, plant.gyro.drift_rms])
    phys = np.array([params.tau, params.dJ, params.omega_f, params.zeta_f])
    rec, done = closed_loop_kernel(
        plant.sys.A, plant.sys.B, z, loop.d_exo, loop.x_ref, loop.u_ref,
        gain_vector(loop.law, loop.estimator), sens, phys, plant.n_q, config.dt,
        float(loop.law.u_max), float(config.blowup_threshold), np.zeros(4), np.zeros(5),
    )
    unstable = done < n
    if unstable:
        rec[done:] = np.nan
    t = np.arange(n) * config.dt
    series = {name: rec[:, col(name)] for name in COLUMNS}
    stats = compute_stats(series, t, _windows(config, t))
    return RunResult(config, seed, params, t, series, int(done), bool(unstable), stats)


# -- sweeps ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    """Per-gamma RMS values of one estimator kind (monotone gamma axis)."""

    kind: str
    gammas: np.ndarray
    attitude_rms: np.ndarray
    rate_rms: np.ndarray
    command_rms: np.ndarray
    transmitted_rms: np.ndarray
    unstable: np.ndarray
    saturated_fraction: np.ndarray
    joint: bool = True

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in dataclasses.asdict(self).items()}


def _sweep_config(config, kind, g, joint):
    est = EstimatorConfig(kind, g, g if joint else config.estimator.gamma_rate)
    return config.replace(estimator=est)


def sweep_gamma(config: ExperimentConfig, gammas, kinds=("dynamic", "static"), joint=True):
    """One run per ``(gamma, kind)`` with the shared ``config.seed``.

    ``joint=True`` sets both estimator channels to ``gamma``; otherwise only
    the attitude channel is swept and the rate channel keeps its configured
    value.  Attitude and rate RMS are over the full run, command and
    transmitted-acceleration RMS over the zero-reference tail.
    """
    g = np.sort(np.asarray(gammas, dtype=float))
    if g.size == 0 or np.any(np.diff(g) <= 0):
        raise ValueError("gamma values must be distinct")
    if g[0] <= 0 or g[-1] >= 1:
        raise ValueError("gamma values must lie in (0, 1)")
    out = {}
    for kind in kinds:
        rows = []
        for gk in g:
            r = run_closed_loop(_sweep_config(config, kind, float(gk), joint))
            rows.append((r.stat("e_true_q"), r.stat("e_true_w"), r.stat("u_cmd", "tail"),
                         r.stat("a_transmitted", "tail"), r.unstable, r.saturated_fraction))
        cols = list(zip(*rows))
        out[kind] = SweepResult(kind, g, *(np.array(c, dtype=float) for c in cols[:4]),
                                np.array(cols[4], dtype=bool), np.array(cols[5], dtype=float), joint)
    return out


# -- Monte Carlo ----------------------------------------------------------------------


@dataclass
class MonteCarloResult:
    master_seed: int
    seeds: list
    params: list
    unstable: np.ndarray
    saturated_fraction: np.ndarray
    metrics: dict
    saturation_threshold: float = 0.01

    @property
    def n_runs(self):
        return len(self.seeds)

    @property
    def n_unstable(self):
        return int(np.sum(self.unstable))

    @property
    def n_saturating(self):
        return int(np.sum(self.saturated_fraction > self.saturation_threshold))

    def quantiles(self, qs=(0.05, 0.5, 0.95)):
        out = {}
        for name, vals in self.metrics.items():
            v = np.asarray(vals, dtype=float)
            v = v[~np.isnan(v)]
            out[name] = {f"q{int(round(q * 100)):02d}": (float(np.quantile(v, q)) if v.size else math.nan) for q in qs}
            out[name]["max"] = float(np.max(v)) if v.size else math.nan
        return out

    def to_dict(self):
        return {
            "master_seed": self.master_seed,
            "n_runs": self.n_runs,
            "n_unstable": self.n_unstable,
            "n_saturating": self.n_saturating,
            "saturation_threshold": self.saturation_threshold,
            "seeds": [int(s) for s in self.seeds],
            "params": [p.as_dict() for p in self.params],
            "unstable": self.unstable.tolist(),
            "saturated_fraction": self.saturated_fraction.tolist(),
            "quantiles": self.quantiles(),
        }


MC_METRICS = (
    ("attitude_rms", "e_true_q", "full", "rms"),
    ("attitude_max", "e_true_q", "full", "max_abs"),
    ("rate_rms", "e_true_w", "full", "rms"),
    ("command_rms_tail", "u_cmd", "tail", "rms"),
    ("command_max", "u_cmd", "full", "max_abs"),
)


def _mc_draws(config, n, master_seed):
    words = np.random.SeedSequence(master_seed).generate_state(2 * n, dtype=np.uint64)
    draws = []
    for k in range(n):
        params = sample_params(np.random.default_rng(int(words[2 * k])), config.ranges, config.params.J0)
        draws.append((int(words[2 * k + 1]), params))
    return draws


def _mc_one(args):
    config, seed, params = args
    r = run_closed_loop(config, seed, params)
    metrics = {name: r.stat(ch, w, key) for name, ch, w, key in MC_METRICS}
    return r.unstable, r.saturated_fraction, metrics


def monte_carlo(config: ExperimentConfig, n_runs, master_seed=None, workers=1):
    """``n_runs`` closed loops over parameters drawn uniformly from ``config.ranges``.

    Run ``k`` gets its own parameter and noise seeds derived from
    ``master_seed`` (default ``config.seed``), so the campaign is
    deterministic and independent of ``workers``.
    """
    if n_runs < 1:
        raise ValueError("need at least one run")
    master_seed = config.seed if master_seed is None else int(master_seed)
    draws = _mc_draws(config, n_runs, master_seed)
    jobs = [(config, s, p) for s, p in draws]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_mc_one, jobs))
    else:
        results = [_mc_one(j) for j in jobs]
    metrics = {name: np.array([r[2][name] for r in results]) for name, *_ in MC_METRICS}
    return MonteCarloResult(
        master_seed,
        [s for s, _ in draws],
        [p for _, p in draws],
        np.array([r[0] for r in results], dtype=bool),
        np.array([r[1] for r in results], dtype=float),
        metrics,
    )


# -- export ---------------------------------------------------------------------------

# Documented CSV columns first, then the extra channels needed to rebuild statistics.
CSV_COLUMNS = (
    ("t_s", None), ("q_ref", "q_ref"), ("q_true", "q_true"), ("q_meas", "q_meas"),
    ("w_meas", "w_meas"), ("q_hat", "q_hat"), ("w_hat", "w_hat"), ("sg_hat", "sg_hat"),
    ("a_hat", "a_hat"), ("u_cmd", "u_cmd"), ("e_track_true", "e_true_q"),
    ("e_track_post", "e_post_q"), ("e_model", "e_model_q"), ("sat_flag", "sat_flag"),
    ("w_ref", "w_ref"), ("w_true", "w_true"), ("theta", "theta"), ("s_hat", "s_hat"),
    ("e_rate_true", "e_true_w"), ("e_rate_post", "e_post_w"), ("e_rate_model", "e_model_w"),
    ("e_ctrl_q", "e_ctrl_q"), ("e_ctrl_w", "e_ctrl_w"), ("d_true", "d_true"),
    ("a_transmitted", "a_transmitted"),
)


def _fmt(x):
    return "" if math.isnan(x) else repr(float(x))


def _provenance(result):
    return f"# config_hash={result.config_hash} seed={result.seed}"


def export_run(result: RunResult, out_dir=None, stem=None):
    """Write ``<stem>.csv`` (time series) and ``<stem>.json`` (statistics + config).

    Returns the two paths.  Unsampled attitude rows leave ``q_meas`` and
    ``e_model`` blank.  Values are written with ``repr`` so they re-import
    bit-exactly.
    """
    out = Path(result.config.out_dir if out_dir is None else out_dir)
    stem = stem or f"run_{result.config_hash}_s{result.seed}"
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        with open(csv_path, "w", newline="") as fh:
            fh.write(_provenance(result) + "\n")
            w = csv.writer(fh)
            w.writerow([name for name, _ in CSV_COLUMNS])
            cols = [result.t if key is None else result.series[key] for _, key in CSV_COLUMNS]
            for row in zip(*cols):
                w.writerow([_fmt(x) for x in row])
        json_path = out / f"{stem}.json"
        doc = result.summary()
        doc["config"] = result.config.to_dict()
        doc["windows"] = {"tail_start_s": result.config.tail_start_s, "slew_window_s": list(result.config.slew_window_s)}
        with open(json_path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise OSError(f"cannot write run output under {out}: {exc}") from exc
    return csv_path, json_path


def load_series(csv_path):
    """Read an exported CSV back as ``(provenance dict, t, series)`` with internal channel names."""
    with open(csv_path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("#"):
            raise ValueError(f"{csv_path}: missing provenance line")
        prov = dict(item.split("=", 1) for item in first[1:].split())
        reader = csv.reader(fh)
        header = next(reader)
        data = [[math.nan if x == "" else float(x) for x in row] for row in reader]
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    by_csv = {name: arr[:, k] for k, name in enumerate(header)}
    series = {key: by_csv[name] for name, key in CSV_COLUMNS if key is not None}
    return prov, by_csv["t_s"], series


def export_json(doc, path, config: Optional[ExperimentConfig] = None, seed=None):
    """Write a JSON report, embedding config hash, seed and config snapshot when given."""
    doc = dict(doc)
    if config is not None:
        doc.setdefault("config_hash", config.config_hash())
        doc.setdefault("config", config.to_dict())
        doc.setdefault("seed", config.seed if seed is None else seed)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")

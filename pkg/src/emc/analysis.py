"""Frequency-domain robustness analysis of the state predictor.

The predictor error system maps the output-side uncertainty ``e + d_y`` into
the a-posteriori model error::

    e_bar = S_m (e + d_y),   S_m = I - V_m,   V_m = C_m (zI - A_m)^-1 B_m

``V_m`` (low-pass) filters the neglected dynamics of the plant, ``S_m``
(high-pass) attenuates the cross-coupling terms.  The helpers below build
those operators, evaluate the plant-to-model fractional error ``E`` and run a
small-gain certification over the corners of the parameter box.

For the case study the rate channel is analysed at the base rate and the
attitude channel at the attitude rate, lifting the multi-rate predictor over
one attitude period.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .embedded_model import EmbeddedModel
from .noise_estimator import (
    CaseStudyEstimator,
    DynamicNoiseEstimator,
    StaticEstimator,
    _attitude_lift,
    predictor_step_matrices,
)
from .plant import DesignModelParams, build_plant
from .statespace import DimensionError, SingularityError, as_matrix, spectral_radius

__all__ = [
    "FrequencyGrid",
    "PredictorErrorSystem",
    "FractionalError",
    "StabilityReport",
    "log_grid",
    "build_predictor_error_system",
    "case_study_error_system",
    "sensitivities",
    "fractional_error",
    "neglected_dynamics",
    "cross_coupling",
    "small_gain_check",
    "error_loop_response",
    "low_frequency_slope",
    "winding_number",
    "short_term_ratio",
    "noise_rms_prediction",
    "write_frequency_csv",
]


# -- grids and systems -------------------------------------------------------------


@dataclass(frozen=True)
class FrequencyGrid:
    """Increasing frequencies in Hz, all in ``(0, f_max]``."""

    f_hz: np.ndarray
    f_max: float

    def __post_init__(self):
        f = np.asarray(self.f_hz, dtype=float).reshape(-1)
        if f.size == 0:
            raise ValueError("frequency grid is empty")
        if not self.f_max > 0:
            raise ValueError("f_max must be positive")
        if f[0] <= 0 or f[-1] > self.f_max * (1 + 1e-12) or np.any(np.diff(f) <= 0):
            raise ValueError("grid must be strictly increasing inside (0, f_max]")
        f.setflags(write=False)
        object.__setattr__(self, "f_hz", f)

    def __len__(self):
        return self.f_hz.size


def log_grid(f_min, f_max, points_per_decade=400, top=None):
    """Log-spaced grid from ``f_min`` to ``top`` (default ``f_max``)."""
    top = f_max if top is None else top
    if not 0 < f_min < top <= f_max * (1 + 1e-12):
        raise ValueError(f"need 0 < f_min < top <= f_max, got {f_min}, {top}, {f_max}")
    n = max(2, int(math.ceil(points_per_decade * math.log10(top / f_min))) + 1)
    f = np.logspace(math.log10(f_min), math.log10(top), n)
    f[-1] = min(f[-1], f_max)
    return FrequencyGrid(f, f_max)


@dataclass(frozen=True)
class PredictorErrorSystem:
    """``V_m = C_m (zI - A_m)^-1 B_m`` sampled every ``dt`` seconds."""

    A_m: np.ndarray
    B_m: np.ndarray
    C_m: np.ndarray
    dt: float
    channel: str = ""

    def __post_init__(self):
        A = as_matrix(self.A_m, name="A_m")
        n = A.shape[0]
        if A.shape[1] != n:
            raise DimensionError("A_m must be square")
        B = as_matrix(self.B_m, rows=n, name="B_m")
        C = as_matrix(self.C_m, cols=n, name="C_m")
        if C.shape[0] != B.shape[1]:
            raise DimensionError("V_m must be square (as many outputs as inputs)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name, val in (("A_m", A), ("B_m", B), ("C_m", C)):
            object.__setattr__(self, name, val)

    @property
    def f_max(self):
        return 0.5 / self.dt

    @property
    def n_outputs(self):
        return self.C_m.shape[0]

    @property
    def spectral_radius(self):
        return spectral_radius(self.A_m)

    @property
    def stable(self):
        return self.spectral_radius < 1.0


def build_predictor_error_system(model: EmbeddedModel, est: DynamicNoiseEstimator, dt=1.0, channel=""):
    """Assemble the predictor error dynamics from model and estimator.

    States ``(eta_c, x_d, q)``, input ``e + d_y``, and ``V_m`` output
    ``-C_c eta_c`` so that ``e_bar = C_c eta_c + (e + d_y) = (I - V_m)(e + d_y)``.
    """
    if est.L.shape != (model.n_w, model.n_y):
        raise DimensionError(f"L must have shape {(model.n_w, model.n_y)}, got {est.L.shape}")
    n_c, n_d, n_q = model.n_c, model.n_d, est.n_q
    C, L = model.C_c, est.L
    A_m = np.zeros((n_c + n_d + n_q,) * 2)
    A_m[:n_c, :n_c] = model.A_c - model.G_c @ L @ C
    A_m[:n_c, n_c:n_c + n_d] = -model.H_c
    A_m[:n_c, n_c + n_d:] = -model.G_c @ est.N
    A_m[n_c:n_c + n_d, :n_c] = model.G_d @ L @ C
    A_m[n_c:n_c + n_d, n_c:n_c + n_d] = model.A_d
    A_m[n_c:n_c + n_d, n_c + n_d:] = model.G_d @ est.N
    A_m[n_c + n_d:, :n_c] = est.B_q @ C
    A_m[n_c + n_d:, n_c + n_d:] = est.A_q
    B_m = np.vstack([-model.G_c @ L, model.G_d @ L, est.B_q])
    C_m = np.hstack([-C, np.zeros((model.n_y, n_d + n_q))])
    return PredictorErrorSystem(A_m, B_m, C_m, dt, channel)


def _reduced_rate_model(model):
    # omega_d driven by (a, s) and w_u; a and s driven by w_a, w_s
    off = model.n_w - 3
    return EmbeddedModel(
        A_c=[[1.0]], B_c=[[1.0]], C_c=[[1.0]],
        A_d=[[1.0, 1.0], [0.0, 1.0]],
        G_d=[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        H_c=[[model.H_c[1, 1], model.H_c[1, 2]]],
        G_c=[model.G_c[1, off:]],
    )


def _reduced_attitude_model(model, n_q):
    A_l, b_g, b_q = _attitude_lift(model, n_q)
    parasitic = model.n_w == 5
    G_c = [[b_q[0], b_g[0]]] if parasitic else [[b_g[0]]]
    G_d = [[b_q[1], b_g[1]]] if parasitic else [[b_g[1]]]
    return EmbeddedModel(A_c=[[1.0]], B_c=[[1.0]], C_c=[[1.0]], A_d=[[1.0]], G_d=G_d, H_c=[[A_l[0, 1]]], G_c=G_c)


def case_study_error_system(model: EmbeddedModel, est, channel="attitude", dt=0.01):
    """Predictor error system of one case-study channel.

    ``channel``:

    * ``"rate"`` -- gyro channel ``(w_d, a, s)`` at the base rate ``dt``;
    * ``"attitude_reduced"`` -- attitude channel ``(q, s_g[, p])`` lifted to
      the attitude rate, assuming the rate channel exact;
    * ``"attitude"`` -- the full multi-rate predictor lifted over one
      attitude period, from attitude error to attitude model error, with the
      gyro error input held at zero.
    """
    if not isinstance(est, (CaseStudyEstimator, StaticEstimator)):
        raise TypeError("expected a case-study estimator")
    n_q = est.n_q
    if channel == "rate":
        generic = DynamicNoiseEstimator.static(np.asarray(est.L_g).reshape(3, 1))
        return build_predictor_error_system(_reduced_rate_model(model), generic, dt, "rate")
    if channel == "attitude_reduced":
        red = _reduced_attitude_model(model, n_q)
        if isinstance(est, StaticEstimator):
            generic = DynamicNoiseEstimator.static(np.asarray(est.L_q).reshape(2, 1))
        else:
            generic = DynamicNoiseEstimator([[est.l_q]], [[est.m_q]], [[1.0 - est.beta_q]], [[1.0]])
        return build_predictor_error_system(red, generic, n_q * dt, "attitude_reduced")
    if channel == "attitude":
        F_att, E_att = predictor_step_matrices(model, est, True)
        F_idle, _ = predictor_step_matrices(model, est, False)
        hold = np.linalg.matrix_power(F_idle, n_q - 1)
        A_m = hold @ F_att
        B_m = hold @ E_att[:, :1]
        C_m = np.zeros((1, A_m.shape[0]))
        C_m[0, 0] = -1.0
        return PredictorErrorSystem(A_m, B_m, C_m, n_q * dt, "attitude")
    raise ValueError(f"unknown channel {channel!r}")


def sensitivities(sys: PredictorErrorSystem, grid):
    """``(S_m, V_m)`` on ``grid``, each of shape ``(n_f, p, p)``."""
    f = grid.f_hz if isinstance(grid, FrequencyGrid) else np.asarray(grid, dtype=float).reshape(-1)
    if np.any(np.abs(f) > sys.f_max * (1 + 1e-12)):
        raise ValueError(f"grid exceeds the Nyquist limit {sys.f_max} Hz of channel {sys.channel!r}")
    n, p = sys.A_m.shape[0], sys.n_outputs
    poles = np.linalg.eigvals(sys.A_m)
    z = np.exp(2j * np.pi * f * sys.dt)
    V = np.empty((f.size, p, p), dtype=complex)
    eye = np.eye(n)
    for k, zk in enumerate(z):
        if np.min(np.abs(poles - zk)) <= 1e-12:
            raise SingularityError(f"predictor pole on the grid point f = {f[k]} Hz")
        V[k] = sys.C_m @ np.linalg.solve(zk * eye - sys.A_m, sys.B_m.astype(complex))
    S = np.eye(p)[None, :, :] - V
    return S, V


# -- uncertainty models ---------------------------------------------------------------


@dataclass(frozen=True)
class FractionalError:
    exact: np.ndarray
    approx: np.ndarray


def _s(f):
    return 2j * np.pi * np.asarray(f, dtype=float)


def _rigid_ratio(params, s):
    # P/M restricted to the rigid body: s / ((1 + dJ) (s + 1/tau))
    return s / ((1.0 + params.dJ) * (s + 1.0 / params.tau))


def _flex_factor(params, s):
    v = s / params.omega_f
    return 1.0 / (v * v + 2.0 * params.zeta_f * v + 1.0)


def fractional_error(params: DesignModelParams, f):
    """Fractional error ``E = M^-1 P - 1`` with ``M = 1/(J0 s^2)``.

    ``exact`` follows from the plant transfer; it is finite at ``f = 0``
    (value ``-1``, the friction pole removing the rigid gain).  ``approx`` is
    the low/mid-frequency expansion
    ``-(1 - dJ)/(s tau + 1) + dJ + v^2 + 2 zeta v``, whose high-frequency
    growth is not physical.
    """
    s = _s(f)
    exact = _rigid_ratio(params, s) * _flex_factor(params, s) - 1.0
    v = s / params.omega_f
    approx = -(1.0 - params.dJ) / (s * params.tau + 1.0) + params.dJ + (v * v + 2.0 * params.zeta_f * v)
    return FractionalError(exact, approx)


def neglected_dynamics(params: DesignModelParams, f):
    """High-frequency part of ``E`` left after moving friction and inertia to the cross-coupling.

    ``E = (R - 1) + R (F - 1)`` with ``R`` the rigid ratio and ``F`` the
    flexible-link factor; this returns ``R (F - 1)``.
    """
    s = _s(f)
    return _rigid_ratio(params, s) * (_flex_factor(params, s) - 1.0)


def cross_coupling(params: DesignModelParams, f):
    """Cross-coupling term ``M dm = -1/(s tau) - dJ``; unbounded (``inf``) at ``f = 0``."""
    f = np.asarray(f, dtype=float)
    s = _s(f)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = -1.0 / (s * params.tau) - params.dJ
    return np.where(f == 0, complex(np.inf, 0.0), val)


# -- robustness ---------------------------------------------------------------------


def winding_number(curve, point=-1.0 + 0.0j):
    """Net encirclements of ``point`` by the closed curve ``curve`` (counter-clockwise positive)."""
    c = np.asarray(curve, dtype=complex) - point
    if np.any(c == 0):
        raise ValueError("curve passes through the point")
    ang = np.unwrap(np.angle(np.append(c, c[0])))
    return int(round((ang[-1] - ang[0]) / (2 * np.pi)))


def _closed_nyquist(values):
    # positive frequencies followed by the mirrored conjugate branch
    return np.concatenate([values, np.conj(values[::-1])])


@dataclass
class CornerResult:
    corner_id: int
    params: dict
    max_VdE: float
    max_SMdm: float
    max_VE: float
    eta: float
    winding_VdE: int
    winding_VE: Optional[int]
    min_distance_VE: float

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class StabilityReport:
    """Small-gain certification over parameter corners.

    ``eta`` is always reported; ``passed`` states whether ``eta < 1``.
    ``passed_VE`` is the stricter test on ``V_m E`` alone.
    """

    channel: str
    f_max: float
    eta: float
    passed: bool
    max_VE: float
    passed_VE: bool
    corners: list
    grid_points: int
    eta_coarse: float
    nyquist: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "channel": self.channel,
            "f_max_hz": self.f_max,
            "eta": self.eta,
            "eta_coarse_grid": self.eta_coarse,
            "grid_points": self.grid_points,
            "small_gain_passed": self.passed,
            "max_VE": self.max_VE,
            "VE_bound_passed": self.passed_VE,
            "corners": [c.to_dict() for c in self.corners],
        }


def _corner_metrics(V, S, f, params):
    dE = neglected_dynamics(params, f)
    E = fractional_error(params, f).exact
    Mdm = cross_coupling(params, f)
    VdE = V * dE
    VE = V * E
    SMdm = S * Mdm
    return VdE, VE, SMdm


def small_gain_check(sys: PredictorErrorSystem, corners, grid=None):
    """Evaluate the small-gain bound ``max |V_m dE| + max |S_m M dm|`` over corners.

    ``dE`` is the neglected flexible dynamics and ``M dm`` the friction and
    inertia cross-coupling.  The stricter ``max |V_m E|`` with the exact
    fractional error is reported separately, together with the winding
    numbers of the closed Nyquist curves of ``V_m dE`` and ``V_m E`` around
    ``-1``.  ``winding_VE`` is ``None`` when the curve touches ``-1``
    (``E(0) = -1`` and ``V_m(0) = 1`` make it start there).
    """
    if sys.n_outputs != 1:
        raise DimensionError("small-gain check is implemented for a scalar channel")
    grid = log_grid(1e-5, sys.f_max) if grid is None else grid
    f = grid.f_hz
    S, V = sensitivities(sys, grid)
    S, V = S[:, 0, 0], V[:, 0, 0]
    results, curves = [], []
    eta_coarse = 0.0
    for k, params in enumerate(corners):
        VdE, VE, SMdm = _corner_metrics(V, S, f, params)
        dist = float(np.min(np.abs(VE + 1.0)))
        try:
            w_VE = winding_number(_closed_nyquist(VE)) if dist > 1e-3 else None
        except ValueError:
            w_VE = None
        res = CornerResult(
            corner_id=k,
            params=params.as_dict(),
            max_VdE=float(np.max(np.abs(VdE))),
            max_SMdm=float(np.max(np.abs(SMdm))),
            max_VE=float(np.max(np.abs(VE))),
            eta=float(np.max(np.abs(VdE)) + np.max(np.abs(SMdm))),
            winding_VdE=winding_number(_closed_nyquist(VdE)),
            winding_VE=w_VE,
            min_distance_VE=dist,
        )
        results.append(res)
        eta_coarse = max(eta_coarse, float(np.max(np.abs(VdE[::10])) + np.max(np.abs(SMdm[::10]))))
        curves.append((k, "V_m*dE", VdE))
        curves.append((k, "V_m*E", VE))
        curves.append((k, "E", fractional_error(params, f).exact))
    eta = max(r.eta for r in results)
    max_VE = max(r.max_VE for r in results)
    return StabilityReport(
        channel=sys.channel,
        f_max=sys.f_max,
        eta=eta,
        passed=eta < 1.0,
        max_VE=max_VE,
        passed_VE=max_VE < 1.0,
        corners=results,
        grid_points=len(grid),
        eta_coarse=eta_coarse,
        nyquist=[(f, k, ch, vals) for k, ch, vals in curves],
    )


def error_loop_response(S, V, dE, Mdm, E=None, W_y=None, M_dm_exo=None, DW=None):
    """Error-loop sensitivity ``dS = (1 + V dE - S M dm)^-1`` and forced tracking error.

    Scalar channel; all arguments are arrays over the same grid.  Returns
    ``(dS, e_y)`` with ``e_y = dS [V (E + W_y) - S (M dm_exo + D W)]`` (terms
    left as ``None`` count as zero).  Raises :class:`SingularityError` where
    ``1 + V dE - S M dm`` vanishes.
    """
    S, V = np.asarray(S, dtype=complex), np.asarray(V, dtype=complex)
    G = V * np.asarray(dE, dtype=complex) - S * np.asarray(Mdm, dtype=complex)
    den = 1.0 + G
    if np.any(np.abs(den) < 1e-12):
        raise SingularityError("error loop singular on the grid: closed loop at the stability boundary")
    dS = 1.0 / den

    def z(x):
        return 0.0 if x is None else np.asarray(x, dtype=complex)

    e_y = dS * (V * (z(E) + z(W_y)) - S * (z(M_dm_exo) + z(DW)))
    return dS, e_y


def low_frequency_slope(f, mag, f_lo=1e-4, f_hi=1e-3):
    """Least-squares slope of ``log10 |mag|`` versus ``log10 f`` on ``[f_lo, f_hi]``."""
    f = np.asarray(f, dtype=float)
    sel = (f >= f_lo) & (f <= f_hi)
    if sel.sum() < 2:
        raise ValueError("fewer than two grid points inside the slope window")
    return float(np.polyfit(np.log10(f[sel]), np.log10(np.abs(np.asarray(mag)[sel])), 1)[0])


def short_term_ratio(params: DesignModelParams, dt=0.01):
    """Plant over rigid-model attitude response one step after a unit acceleration step."""
    plant = build_plant(params, dt)
    x1 = plant.B[:, 0]
    return float(abs(plant.C[0] @ x1) / (0.5 * dt * dt))


def noise_rms_prediction(sys: PredictorErrorSystem, noise_rms, n_points=20000):
    """RMS of ``V_m w`` for white noise of RMS ``noise_rms`` sampled every ``sys.dt``."""
    f = np.linspace(0.0, sys.f_max, n_points + 1)[1:]
    _, V = sensitivities(sys, f)
    gain2 = np.mean(np.abs(V[:, 0, 0]) ** 2)
    return float(noise_rms * math.sqrt(gain2))


def write_frequency_csv(path, rows):
    """Write ``(f, corner_id, channel, values)`` tuples as Bode/Nyquist CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f_hz", "re", "im", "mag_db", "phase_deg", "channel", "corner_id"])
        for f, corner, channel, vals in rows:
            vals = np.asarray(vals, dtype=complex)
            with np.errstate(divide="ignore"):
                mag_db = 20 * np.log10(np.abs(vals))
            phase = np.degrees(np.angle(vals))
            for k in range(vals.size):
                w.writerow([repr(float(f[k])), repr(vals[k].real), repr(vals[k].imag),
                            repr(float(mag_db[k])), repr(float(phase[k])), channel, corner])
    return path

"""Model-based control: Sylvester solution, control law, reference and error bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .embedded_model import EmbeddedModel, ModelState
from .statespace import DimensionError, as_matrix, place_siso, poly_from_roots, spectral_radius

__all__ = [
    "SylvesterError",
    "SylvesterSolution",
    "ControlLaw",
    "Slew",
    "ReferenceProfile",
    "ErrorRecord",
    "solve_output_sylvester",
    "design_control_law",
    "command",
    "reference_step",
    "record_errors",
    "slew_sequence",
    "error_dynamics",
    "propagate_tracking_error",
]


class SylvesterError(np.linalg.LinAlgError):
    """The stacked Sylvester system is rank deficient or inconsistent."""


@dataclass(frozen=True)
class SylvesterSolution:
    Q: np.ndarray
    M_c: np.ndarray
    residual: float

    def to_dict(self):
        return {"Q": self.Q.tolist(), "M_c": self.M_c.tolist(), "residual": self.residual}


def sylvester_residual(A_c, B_c, C_perf, A_d, H_c, Q, M_c):
    """Max-norm residual of ``A_c Q + B_c M_c = H_c + Q A_d`` and ``C_perf Q = 0``."""
    r1 = A_c @ Q + B_c @ M_c - H_c - Q @ A_d
    r2 = C_perf @ Q
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


def solve_output_sylvester(A_c, B_c, C_perf, A_d, H_c, tol=1e-10):
    """Solve for ``(Q, M_c)`` so that the disturbance is rejected at the performance output.

    The pair of equations ``A_c Q - Q A_d + B_c M_c = H_c`` and ``C_perf Q = 0``
    is vectorized (column-major) into one linear system in
    ``[vec(Q); vec(M_c)]``.
    """
    A_c = as_matrix(A_c, name="A_c")
    n_c = A_c.shape[0]
    B_c = as_matrix(B_c, rows=n_c, name="B_c")
    C_perf = as_matrix(C_perf, cols=n_c, name="C_perf")
    A_d = as_matrix(A_d, name="A_d")
    n_d = A_d.shape[0]
    H_c = as_matrix(H_c, rows=n_c, cols=n_d, name="H_c")
    m = B_c.shape[1]

    I_d = np.eye(n_d)
    top = np.hstack([np.kron(I_d, A_c) - np.kron(A_d.T, np.eye(n_c)), np.kron(I_d, B_c)])
    bottom = np.hstack([np.kron(I_d, C_perf), np.zeros((C_perf.shape[0] * n_d, m * n_d))])
    lhs = np.vstack([top, bottom])
    rhs = np.concatenate([H_c.reshape(-1, order="F"), np.zeros(C_perf.shape[0] * n_d)])

    n_unknown = lhs.shape[1]
    rank = np.linalg.matrix_rank(lhs)
    if rank < n_unknown:
        raise SylvesterError(f"Sylvester system is rank deficient ({rank} < {n_unknown} unknowns)")
    if lhs.shape[0] == n_unknown:
        sol = np.linalg.solve(lhs, rhs)
    else:
        sol = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    Q = sol[: n_c * n_d].reshape((n_c, n_d), order="F")
    M_c = sol[n_c * n_d:].reshape((m, n_d), order="F")
    res = sylvester_residual(A_c, B_c, C_perf, A_d, H_c, Q, M_c)
    if res > tol * max(1.0, np.max(np.abs(H_c))):
        raise SylvesterError(f"Sylvester system is inconsistent (residual {res:.3e})")
    return SylvesterSolution(Q, M_c, res)


@dataclass(frozen=True)
class ControlLaw:
    """``u = u_ref + K e_hat - (M_c x_d + m(x_c))``, clipped to ``+-u_max``."""

    K: np.ndarray
    sylvester: SylvesterSolution
    u_max: float = math.inf
    known_coupling: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "K", as_matrix(self.K, name="K"))
        if not self.u_max > 0:
            raise ValueError("command bound must be positive")

    @property
    def Q(self):
        return self.sylvester.Q

    @property
    def M_c(self):
        return self.sylvester.M_c


def design_control_law(model: EmbeddedModel, gamma=0.1, C_perf=None, u_max=math.inf):
    """State feedback with every eigenvalue of ``A_c - B_c K`` at ``1 - gamma``.

    ``C_perf`` selects the performance output on which the disturbance must
    be cancelled (the attitude row for the case study).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if C_perf is None:
        C_perf = model.C_c[:1]
    K = place_siso(model.A_c, model.B_c, poly_from_roots([1.0 - gamma] * model.n_c))
    sol = solve_output_sylvester(model.A_c, model.B_c, C_perf, model.A_d, model.H_c)
    law = ControlLaw(K, sol, u_max, model.known_coupling)
    if spectral_radius(model.A_c - model.B_c @ law.K) >= 1.0:
        raise ValueError("feedback loop is not stable")
    return law


def tracking_error(law: ControlLaw, x_ref, state: ModelState):
    """A posteriori tracking error ``x_ref - x_c - Q x_d``."""
    return np.asarray(x_ref, dtype=float) - state.x_c - law.Q @ state.x_d


def command(law: ControlLaw, x_ref, u_ref, state: ModelState):
    """Saturated command and a flag telling whether the bound was active."""
    e_hat = tracking_error(law, x_ref, state)
    reject = law.M_c @ state.x_d
    if law.known_coupling is not None:
        reject = reject + np.asarray(law.known_coupling(state.x_c), dtype=float).reshape(-1)
    u_raw = np.atleast_1d(np.asarray(u_ref, dtype=float)) + law.K @ e_hat - reject
    u = np.clip(u_raw, -law.u_max, law.u_max)
    return u, bool(np.any(u != u_raw))


def error_dynamics(model: EmbeddedModel, law: ControlLaw):
    """``(A_c - B_c K, G_c + Q G_d)`` of the unsaturated tracking-error recursion.

    When the reference obeys ``x_ref' = A_c x_ref + B_c u_ref`` and the command
    is not clipped, ``e_hat' = (A_c - B_c K) e_hat - (G_c + Q G_d) w``.
    """
    return model.A_c - model.B_c @ law.K, model.G_c + law.Q @ model.G_d


def propagate_tracking_error(model: EmbeddedModel, law: ControlLaw, e0, w):
    """Run the error recursion from ``e0`` under noise rows ``w``; returns ``len(w) + 1`` rows."""
    A, G = error_dynamics(model, law)
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if w.shape[1] != model.n_w:
        raise DimensionError(f"noise rows need {model.n_w} entries, got {w.shape[1]}")
    e = np.empty((w.shape[0] + 1, model.n_c))
    e[0] = e0
    for i in range(w.shape[0]):
        e[i + 1] = A @ e[i] - G @ w[i]
    return e


# -- reference generation -----------------------------------------------------


@dataclass(frozen=True)
class Slew:
    """Rest-to-rest rotation to ``target_rad`` starting at ``time_s``."""

    time_s: float
    target_rad: float


def _accel_shape(n_ramp, n_plateau):
    up = np.arange(1, n_ramp + 1) / n_ramp
    down = np.arange(n_ramp - 1, -1, -1) / n_ramp
    half = np.concatenate([up, np.ones(n_plateau), down])
    return np.concatenate([half, -half[::-1]])


def _distance_per_unit(shape):
    # rest-to-rest displacement of x' = [[1,1],[0,1]] x + [1/2, 1] a per unit amplitude
    n = shape.size
    return float(np.sum((n - np.arange(n) - 0.5) * shape))


def slew_sequence(distance, a_max, j_max, dt):
    """Per-step acceleration sequence (rad/step**2) of a jerk-limited rest-to-rest slew.

    The acceleration is a symmetric trapezoid followed by its mirror image,
    sized to the shortest plateau that covers ``distance`` and then scaled
    down so the discrete double integrator lands exactly on it.
    """
    if not (a_max > 0 and j_max > 0 and dt > 0):
        raise ValueError("bounds and step must be positive")
    if distance == 0:
        return np.zeros(0)
    n_ramp = max(1, math.ceil(a_max / (j_max * dt) - 1e-9))
    peak = a_max * dt * dt
    D = abs(distance)
    unit0 = _distance_per_unit(_accel_shape(n_ramp, 0))
    if unit0 * peak >= D:
        n_plateau = 0
    else:
        # displacement grows quadratically with the plateau length; bracket then refine
        n_plateau = max(0, int(math.sqrt(D / peak)) - 2 * n_ramp)
        while n_plateau > 0 and _distance_per_unit(_accel_shape(n_ramp, n_plateau)) * peak >= D:
            n_plateau //= 2
        while _distance_per_unit(_accel_shape(n_ramp, n_plateau)) * peak < D:
            n_plateau += 1
    shape = _accel_shape(n_ramp, n_plateau)
    amplitude = D / _distance_per_unit(shape)
    return math.copysign(1.0, distance) * amplitude * shape


@dataclass(frozen=True)
class ReferenceProfile:
    """A sequence of rest-to-rest slews propagated through the reference dynamics.

    ``a_max`` (rad/s**2) and ``j_max`` (rad/s**3) bound the generated
    acceleration and its slew rate.
    """

    slews: tuple = ()
    a_max: float = 0.025
    j_max: float = 0.25
    dt: float = 0.01
    q0: float = 0.0

    def __post_init__(self):
        slews = tuple(s if isinstance(s, Slew) else Slew(*s) for s in self.slews)
        object.__setattr__(self, "slews", tuple(sorted(slews, key=lambda s: s.time_s)))
        _ = self._segments  # validates feasibility eagerly

    @cached_property
    def _segments(self):
        segments = []
        q = self.q0
        free_from = 0
        for slew in self.slews:
            start = int(round(slew.time_s / self.dt))
            if start < free_from:
                raise ValueError(
                    f"slew at t={slew.time_s} s starts before the previous one ends "
                    f"(t={free_from * self.dt} s) under the acceleration/jerk bounds"
                )
            acc = slew_sequence(slew.target_rad - q, self.a_max, self.j_max, self.dt)
            segments.append((start, acc, q))
            free_from = start + acc.size
            q = slew.target_rad
        return tuple(segments)

    @property
    def end_step(self):
        if not self._segments:
            return 0
        start, acc, _ = self._segments[-1]
        return start + acc.size

    def sequence(self, n_steps):
        """Reference states ``(n_steps, 2)`` and commands ``(n_steps,)`` in per-step units."""
        u = np.zeros(n_steps)
        for start, acc, _ in self._segments:
            stop = min(n_steps, start + acc.size)
            if stop > start:
                u[start:stop] = acc[: stop - start]
        x = np.empty((n_steps, 2))
        q, w = self.q0, 0.0
        for i in range(n_steps):
            x[i, 0], x[i, 1] = q, w
            q, w = q + w + 0.5 * u[i], w + u[i]
        return x, u


def reference_step(profile: ReferenceProfile, i):
    """Reference ``(x_ref, u_ref, y_ref)`` at step ``i``."""
    if i < 0:
        raise ValueError("step index must be non-negative")
    q, w = profile.q0, 0.0
    for start, acc, q_start in profile._segments:
        if i < start:
            break
        k = i - start
        if k >= acc.size:
            q, w = q_start + float(np.sum((acc.size - np.arange(acc.size) - 0.5) * acc)), 0.0
            continue
        head = acc[:k]
        q = q_start + float(np.sum((k - np.arange(k) - 0.5) * head))
        w = float(np.sum(head))
        x = np.array([q, w])
        return x, np.array([acc[k]]), x.copy()
    x = np.array([q, w])
    return x, np.zeros(1), x.copy()


# -- error bookkeeping --------------------------------------------------------


@dataclass(frozen=True)
class ErrorRecord:
    """Errors at one step.

    ``e_post`` is the a posteriori tracking error (state sized), ``e_model``
    the masked model error, ``e_control`` the control error
    ``y_ref - (y + C_c Q x_d)`` (the gyro row is compared after correction by
    the estimated gyro systematic error), and ``e_true`` the error against
    the noise-free plant output when a simulator provides it.
    """

    e_post: np.ndarray
    e_model: np.ma.MaskedArray
    e_control: np.ma.MaskedArray
    e_true: Optional[np.ndarray] = None


def record_errors(model: EmbeddedModel, law: ControlLaw, x_ref, state: ModelState, y, y_true=None):
    """Compute the error quantities of one step.

    ``y`` may be a masked array (unsampled channels masked).  The identity
    ``e_control = C_c e_post - e_model`` holds on every sampled channel.
    """
    x_ref = np.asarray(x_ref, dtype=float)
    y = np.ma.asarray(y, dtype=float)
    if y.shape[0] != model.n_y:
        raise DimensionError("measurement has the wrong size")
    e_post = tracking_error(law, x_ref, state)
    y_m = model.C_c @ state.x_c
    y_ref = model.C_c @ x_ref
    e_model = y - y_m
    e_control = y_ref - (y + model.C_c @ law.Q @ state.x_d)
    e_true = None if y_true is None else y_ref - np.asarray(y_true, dtype=float)
    return ErrorRecord(e_post, e_model, e_control, e_true)

"""The embedded model: controllable dynamics forced by command and disturbance.

State equations, with hats on the real-time realization::

    d    = H_c x_d + G_c w + B_c m(x_c)
    x_c' = A_c x_c + B_c u + d
    x_d' = A_d x_d + G_d w
    y_m  = C_c x_c

All case-study quantities are in per-step units: angles in rad, rates in
rad/step, accelerations in rad/step**2.  Conversions to SI happen at the
plant boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .statespace import DimensionError, as_matrix, ctrb, obsv

__all__ = [
    "EmbeddedModel",
    "ModelState",
    "MultiRateSchedule",
    "build_case_study_model",
    "step_model",
    "model_error",
    "composite_matrices",
    "is_collocated",
]

_MATRIX_NAMES = ("A_c", "B_c", "C_c", "A_d", "G_d", "H_c", "G_c")


@dataclass(frozen=True)
class EmbeddedModel:
    """Controllable plus disturbance dynamics.

    ``known_coupling`` is the known part of the state-dependent cross-coupling,
    a callable ``x_c -> vector`` in command space; it enters the model through
    ``B_c``.  ``None`` means identically zero.
    """

    A_c: np.ndarray
    B_c: np.ndarray
    C_c: np.ndarray
    A_d: np.ndarray
    G_d: np.ndarray
    H_c: np.ndarray
    G_c: np.ndarray
    known_coupling: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    check_structure: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        A_c = as_matrix(self.A_c, name="A_c")
        n_c = A_c.shape[0]
        if A_c.shape[1] != n_c:
            raise DimensionError("A_c must be square")
        B_c = as_matrix(self.B_c, rows=n_c, name="B_c")
        C_c = as_matrix(self.C_c, cols=n_c, name="C_c")
        A_d = as_matrix(self.A_d, name="A_d")
        n_d = A_d.shape[0]
        if A_d.shape[1] != n_d:
            raise DimensionError("A_d must be square")
        G_d = as_matrix(self.G_d, rows=n_d, name="G_d")
        n_w = G_d.shape[1]
        H_c = as_matrix(self.H_c, rows=n_c, cols=n_d, name="H_c")
        G_c = as_matrix(self.G_c, rows=n_c, cols=n_w, name="G_c")
        for name, val in zip(_MATRIX_NAMES, (A_c, B_c, C_c, A_d, G_d, H_c, G_c)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

        if self.check_structure:
            if np.linalg.matrix_rank(ctrb(A_c, B_c)) < n_c:
                raise ValueError("(A_c, B_c) is not controllable")
            if np.linalg.matrix_rank(obsv(A_c, C_c)) < n_c:
                raise ValueError("(A_c, C_c) is not observable")
            A, _, _, C = composite_matrices(self)
            if np.linalg.matrix_rank(obsv(A, C)) < n_c + n_d:
                raise ValueError("composite controllable + disturbance state is not observable")

    @property
    def n_c(self):
        return self.A_c.shape[0]

    @property
    def n_d(self):
        return self.A_d.shape[0]

    @property
    def n_w(self):
        return self.G_d.shape[1]

    @property
    def n_u(self):
        return self.B_c.shape[1]

    @property
    def n_y(self):
        return self.C_c.shape[0]

    def zero_state(self):
        return ModelState(np.zeros(self.n_c), np.zeros(self.n_d))

    def to_dict(self):
        return {name: getattr(self, name).tolist() for name in _MATRIX_NAMES}

    @classmethod
    def from_dict(cls, data, **kwargs):
        missing = [name for name in _MATRIX_NAMES if name not in data]
        if missing:
            raise KeyError(f"model document lacks matrices: {', '.join(missing)}")
        return cls(**{name: np.asarray(data[name], dtype=float) for name in _MATRIX_NAMES}, **kwargs)

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text, **kwargs):
        return cls.from_dict(json.loads(text), **kwargs)


@dataclass(frozen=True)
class ModelState:
    """One-step predicted model state ``(x_c, x_d)``."""

    x_c: np.ndarray
    x_d: np.ndarray

    def __post_init__(self):
        x_c = np.array(self.x_c, dtype=float).reshape(-1)
        x_d = np.array(self.x_d, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(x_c)) and np.all(np.isfinite(x_d))):
            raise ValueError("model state has non-finite entries")
        object.__setattr__(self, "x_c", x_c)
        object.__setattr__(self, "x_d", x_d)

    def __add__(self, other):
        return ModelState(self.x_c + other.x_c, self.x_d + other.x_d)

    def as_vector(self):
        return np.concatenate([self.x_c, self.x_d])


@dataclass(frozen=True)
class MultiRateSchedule:
    """Output channel ``k`` is sampled at steps ``i`` with ``i % decimation[k] == 0``."""

    dt: float
    decimation: tuple

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("base step must be positive")
        dec = tuple(int(n) for n in self.decimation)
        if any(n < 1 or n != m for n, m in zip(dec, self.decimation)):
            raise ValueError(f"decimation factors must be integers >= 1, got {self.decimation}")
        object.__setattr__(self, "decimation", dec)

    def available(self, i):
        """Boolean presence mask of the output channels at step ``i``."""
        return np.array([i % n == 0 for n in self.decimation])


def composite_matrices(model: EmbeddedModel):
    """Stacked ``(A, B_u, G_w, C)`` of the state ``[x_c; x_d]`` (no cross-coupling)."""
    n_c, n_d = model.n_c, model.n_d
    A = np.block([[model.A_c, model.H_c], [np.zeros((n_d, n_c)), model.A_d]])
    B_u = np.vstack([model.B_c, np.zeros((n_d, model.n_u))])
    G_w = np.vstack([model.G_c, model.G_d])
    C = np.hstack([model.C_c, np.zeros((model.n_y, n_d))])
    return A, B_u, G_w, C


def is_collocated(model: EmbeddedModel, tol=1e-10):
    """True when ``H_c = B_c M`` for some ``M`` (disturbance addable to the command)."""
    M, *_ = np.linalg.lstsq(model.B_c, model.H_c, rcond=None)
    return bool(np.max(np.abs(model.B_c @ M - model.H_c)) <= tol)


def step_model(model: EmbeddedModel, state: ModelState, u, w):
    """Advance the embedded model by one step.

    Returns the next state and the model output ``y_m = C_c x_c`` of the
    current (pre-update) state.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if u.shape[0] != model.n_u:
        raise DimensionError(f"command has {u.shape[0]} entries, model expects {model.n_u}")
    if w.shape[0] != model.n_w:
        raise DimensionError(f"noise has {w.shape[0]} entries, model expects {model.n_w}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(w))):
        raise ValueError("command and noise must be finite")

    x_c, x_d = state.x_c, state.x_d
    d = model.H_c @ x_d + model.G_c @ w
    if model.known_coupling is not None:
        d = d + model.B_c @ np.asarray(model.known_coupling(x_c), dtype=float).reshape(-1)
    y_m = model.C_c @ x_c
    nxt = ModelState(model.A_c @ x_c + model.B_c @ u + d, model.A_d @ x_d + model.G_d @ w)
    return nxt, y_m


def model_error(y, y_m, schedule: MultiRateSchedule, i):
    """A posteriori model error with unsampled channels masked out.

    Returns a ``numpy.ma.MaskedArray``; masked entries mean "no data at this
    step", which is distinct from a zero error.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    y_m = np.asarray(y_m, dtype=float).reshape(-1)
    present = schedule.available(i)
    if y.shape != y_m.shape or y.shape[0] != present.shape[0]:
        raise DimensionError("measurement, model output and schedule disagree on channel count")
    err = np.where(present, y - y_m, 0.0)
    return np.ma.masked_array(err, mask=~present)


def build_case_study_model(parasitic=False, known_coupling=None):
    """Single-axis attitude model with gyro-bias, acceleration and jerk disturbances.

    States ``x_c = [q_d, w_d]`` (attitude, dirty rate) and
    ``x_d = [s_g, a, s]`` (gyro correction, acceleration, acceleration drift).
    Noise ``w = [w_g, w_u, w_a, w_s]``.  With ``parasitic=True`` a leading
    ``w_q`` entry is added that feeds the attitude row of ``d`` directly, as
    required by the static estimator.
    """
    A_c = np.array([[1.0, 1.0], [0.0, 1.0]])
    B_c = np.array([[0.5], [1.0]])
    C_c = np.eye(2)
    A_d = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]])
    G_d = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    H_c = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0]])
    G_c = np.array([[0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    if parasitic:
        G_d = np.hstack([np.zeros((3, 1)), G_d])
        G_c = np.hstack([np.array([[1.0], [0.0]]), G_c])
    return EmbeddedModel(A_c, B_c, C_c, A_d, G_d, H_c, G_c, known_coupling=known_coupling)

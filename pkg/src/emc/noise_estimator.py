"""Noise estimators: the only feedback path from the plant into the embedded model.

Three forms are provided:

* a generic linear dynamic estimator ``w = L e + N q``, ``q' = A_q q + B_q e``;
* the multi-rate case-study estimator, where the attitude error drives the
  gyro-correction noise through a first-order dynamic feedback at the
  attitude rate and the gyro error drives the remaining noises statically
  at the base rate;
* the static (Kalman-like) alternative, which also injects a "parasitic"
  attitude noise straight into the attitude row of the disturbance.

Gains come only from eigenvalue placement (:func:`tune_by_eigenvalues`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedded_model import EmbeddedModel, composite_matrices
from .statespace import (
    DimensionError,
    PlacementError,
    as_matrix,
    charpoly,
    place_siso,
    poly_from_roots,
    spectral_radius,
)

__all__ = [
    "DynamicNoiseEstimator",
    "CaseStudyEstimator",
    "StaticEstimator",
    "estimate_generic",
    "estimate_case_study",
    "estimate_static",
    "tune_by_eigenvalues",
    "attitude_loop_matrix",
    "rate_loop_matrix",
    "predictor_step_matrices",
    "predictor_monodromy",
]

# Composite state order of the case-study model: [q_d, w_d, s_g, a, s].
RATE_STATES = (1, 3, 4)
# Index of w_g / (w_u, w_a, w_s) in the 4-entry noise vector.
W_G = 0
W_RATE = (1, 2, 3)


def _sized(M, shape, name):
    arr = np.asarray(M, dtype=float)
    if arr.size != shape[0] * shape[1] or (arr.size and arr.ndim == 2 and arr.shape != shape):
        raise DimensionError(f"{name} must have shape {shape}, got {arr.shape}")
    return as_matrix(arr.reshape(shape), name=name, allow_empty=True)


@dataclass(frozen=True)
class DynamicNoiseEstimator:
    """Generic single-rate dynamic estimator.

    A static estimator is the special case with an empty ``A_q`` (see
    :meth:`static`).
    """

    L: np.ndarray
    N: np.ndarray
    A_q: np.ndarray
    B_q: np.ndarray

    def __post_init__(self):
        L = as_matrix(self.L, name="L")
        A_q = np.atleast_2d(np.asarray(self.A_q, dtype=float))
        n_q = A_q.shape[0] if A_q.size else 0
        A_q = _sized(A_q, (n_q, n_q), "A_q")
        N = _sized(self.N, (L.shape[0], n_q), "N")
        B_q = _sized(self.B_q, (n_q, L.shape[1]), "B_q")
        for name, val in (("L", L), ("N", N), ("A_q", A_q), ("B_q", B_q)):
            object.__setattr__(self, name, val)

    @property
    def n_q(self):
        return self.A_q.shape[0]

    @classmethod
    def static(cls, L):
        L = as_matrix(L, name="L")
        return cls(L, np.zeros((L.shape[0], 0)), np.zeros((0, 0)), np.zeros((0, L.shape[1])))


@dataclass(frozen=True)
class CaseStudyEstimator:
    """Multi-rate dynamic estimator of the single-axis case study.

    ``l_q``, ``m_q``, ``beta_q`` act on the attitude error every ``n_q`` steps;
    ``L_g`` maps the gyro error to ``(w_u, w_a, w_s)`` every step.
    """

    l_q: float
    m_q: float
    beta_q: float
    L_g: np.ndarray
    n_q: int = 10
    kind = "dynamic"

    def __post_init__(self):
        if not 0.0 < self.beta_q < 2.0:
            raise ValueError(f"beta_q must lie in (0, 2), got {self.beta_q}")
        L_g = np.asarray(self.L_g, dtype=float).reshape(-1)
        if L_g.shape != (3,):
            raise DimensionError("L_g must have 3 entries")
        object.__setattr__(self, "L_g", L_g)

    def to_dict(self):
        return {"kind": self.kind, "l_q": self.l_q, "m_q": self.m_q, "beta_q": self.beta_q,
                "L_g": self.L_g.tolist(), "n_q": self.n_q}


@dataclass(frozen=True)
class StaticEstimator:
    """Static attitude feedback ``(w_q, w_g) = L_q e_q`` plus the same rate channel."""

    L_q: np.ndarray
    L_g: np.ndarray
    n_q: int = 10
    kind = "static"

    def __post_init__(self):
        L_q = np.asarray(self.L_q, dtype=float).reshape(-1)
        L_g = np.asarray(self.L_g, dtype=float).reshape(-1)
        if L_q.shape != (2,) or L_g.shape != (3,):
            raise DimensionError("L_q needs 2 entries and L_g 3 entries")
        object.__setattr__(self, "L_q", L_q)
        object.__setattr__(self, "L_g", L_g)

    def to_dict(self):
        return {"kind": self.kind, "L_q": self.L_q.tolist(), "L_g": self.L_g.tolist(), "n_q": self.n_q}


def estimator_from_dict(data):
    data = dict(data)
    kind = data.pop("kind")
    if kind == "dynamic":
        return CaseStudyEstimator(**data)
    if kind == "static":
        return StaticEstimator(**data)
    raise ValueError(f"unknown estimator kind {kind!r}")


def estimate_generic(est: DynamicNoiseEstimator, e, q):
    """Return ``(w, q_next)`` with ``w = L e + N q`` and ``q' = A_q q + B_q e``."""
    e = np.asarray(e, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    if e.shape[0] != est.L.shape[1] or q.shape[0] != est.n_q:
        raise DimensionError("error or estimator state has the wrong size")
    if not np.all(np.isfinite(e)):
        raise ValueError("model error must be finite")
    return est.L @ e + est.N @ q, est.A_q @ q + est.B_q @ e


def _check_attitude_step(n_q, e_q, i):
    attitude_step = i % n_q == 0
    if attitude_step and e_q is None:
        raise ValueError(f"step {i} is an attitude step but no attitude error was given")
    if not attitude_step and e_q is not None:
        raise ValueError(f"attitude error supplied at non-attitude step {i}")
    return attitude_step


def estimate_case_study(est: CaseStudyEstimator, e_q, e_g, i, p):
    """One step of the multi-rate dynamic estimator.

    Parameters
    ----------
    e_q : float or None
        Attitude model error; present exactly at steps ``i % n_q == 0``.
    e_g : float
        Gyro model error (every step).
    p : float
        Attitude-channel estimator state.

    Returns
    -------
    w : ndarray, shape (4,)
        ``(w_g, w_u, w_a, w_s)``.
    p_next : float
    """
    w = np.zeros(4)
    w[1:] = est.L_g * float(e_g)
    if _check_attitude_step(est.n_q, e_q, i):
        w[0] = est.l_q * e_q + est.m_q * p
        p = (1.0 - est.beta_q) * p + e_q
    return w, p


def estimate_static(est: StaticEstimator, e_q, e_g, i):
    """One step of the static estimator; returns ``(w_q, w_g, w_u, w_a, w_s)``.

    ``w_q`` must be fed to the parasitic variant of the case-study model
    (``build_case_study_model(parasitic=True)``), where it adds to the
    attitude row of the disturbance.
    """
    w = np.zeros(5)
    w[2:] = est.L_g * float(e_g)
    if _check_attitude_step(est.n_q, e_q, i):
        w[:2] = est.L_q * e_q
    return w


def _rate_channel(model: EmbeddedModel):
    A, _, G_w, C = composite_matrices(model)
    idx = np.array(RATE_STATES)
    cols = np.arange(model.n_w - 3, model.n_w)
    return A[np.ix_(idx, idx)], G_w[np.ix_(idx, cols)], C[1:2, idx]


def _attitude_lift(model: EmbeddedModel, n_q):
    """Attitude error loop lifted over one attitude period.

    States ``(q error, s_g error)``; returns ``(A_l, b_g, b_q)`` where ``b_g``
    is the lifted injection of ``w_g`` and ``b_q`` that of the parasitic
    ``w_q`` (zero for the non-parasitic model).
    """
    parasitic = model.n_w == 5
    j_g = 1 if parasitic else 0
    h = model.H_c[0, 0]
    g_d = model.G_d[0, j_g]
    A_l = np.array([[1.0, n_q * h], [0.0, 1.0]])
    # w_g reaches s_g at once and q through s_g on the n_q - 1 remaining substeps
    b_g = np.array([model.G_c[0, j_g] + (n_q - 1) * h * g_d, g_d])
    b_q = np.array([model.G_c[0, 0], model.G_d[0, 0]]) if parasitic else np.zeros(2)
    return A_l, b_g, b_q


def attitude_loop_matrix(model: EmbeddedModel, est, n_q=None):
    """Closed attitude-channel error loop at the attitude rate.

    3x3 ``(q error, s_g error, p)`` for the dynamic estimator, 2x2 for the
    static one.
    """
    n_q = est.n_q if n_q is None else n_q
    A_l, b_g, b_q = _attitude_lift(model, n_q)
    c = np.array([[1.0, 0.0]])
    if isinstance(est, StaticEstimator):
        inj = (b_q * est.L_q[0] + b_g * est.L_q[1]).reshape(2, 1)
        return A_l - inj @ c
    top = np.hstack([A_l - est.l_q * b_g.reshape(2, 1) @ c, -est.m_q * b_g.reshape(2, 1)])
    bottom = np.array([[1.0, 0.0, 1.0 - est.beta_q]])
    return np.vstack([top, bottom])


def rate_loop_matrix(model: EmbeddedModel, est):
    """Closed rate-channel error loop ``(w_d error, a error, s error)`` at the base rate."""
    A_r, G_r, c_r = _rate_channel(model)
    return A_r - G_r @ est.L_g.reshape(3, 1) @ c_r


def _tune_dynamic_attitude(model, n_q, lam):
    target = poly_from_roots([lam] * 3)

    def coeffs(beta, a, b):
        # (a, b) parametrize the compensator numerator a z + b, i.e. l = a,
        # m = b - a (beta - 1); the char-poly is affine in (beta, a, b).
        l = a
        m = b - a * (beta - 1.0)
        est = CaseStudyEstimator(l, m, beta if 0 < beta < 2 else 1.0, np.zeros(3), n_q)
        M = attitude_loop_matrix(model, est)
        if not 0 < beta < 2:
            M[2, 2] = 1.0 - beta
        return charpoly(M)[1:]

    base = coeffs(0.0, 0.0, 0.0)
    J = np.column_stack([coeffs(*e) - base for e in np.eye(3)])
    if np.linalg.matrix_rank(J) < 3:
        raise PlacementError("attitude channel gains cannot be assigned")
    beta, a, b = np.linalg.solve(J, target[1:] - base)
    return a, b - a * (beta - 1.0), beta


def tune_by_eigenvalues(model: EmbeddedModel, kind="dynamic", gamma_attitude=0.03, gamma_rate=0.03, n_q=10):
    """Estimator gains placing every channel eigenvalue at ``1 - gamma``.

    The attitude channel is placed at the attitude rate ``1 / (n_q dt)``; the
    rate channel at the base rate.  ``kind="static"`` expects the parasitic
    variant of the case-study model.
    """
    for name, g in (("gamma_attitude", gamma_attitude), ("gamma_rate", gamma_rate)):
        if not 0.0 < g < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {g}")
    if kind == "static" and model.n_w != 5:
        raise ValueError("static estimator needs the parasitic model (5 noise entries)")
    if kind == "dynamic" and model.n_w != 4:
        raise ValueError("dynamic estimator needs the 4-noise case-study model")

    A_r, G_r, c_r = _rate_channel(model)
    ell = place_siso(A_r, c_r, poly_from_roots([1.0 - gamma_rate] * 3), side="observer")
    L_g = np.linalg.solve(G_r, ell).reshape(-1)

    lam = 1.0 - gamma_attitude
    if kind == "dynamic":
        l_q, m_q, beta_q = _tune_dynamic_attitude(model, n_q, lam)
        est = CaseStudyEstimator(float(l_q), float(m_q), float(beta_q), L_g, n_q)
    elif kind == "static":
        A_l, b_g, b_q = _attitude_lift(model, n_q)
        ell_q = place_siso(A_l, [[1.0, 0.0]], poly_from_roots([lam] * 2), side="observer")
        L_q = np.linalg.solve(np.column_stack([b_q, b_g]), ell_q).reshape(-1)
        est = StaticEstimator(L_q, L_g, n_q)
    else:
        raise ValueError(f"kind must be 'dynamic' or 'static', got {kind!r}")
    return est


def predictor_step_matrices(model: EmbeddedModel, est, attitude_step):
    """One-step transition of the full predictor error.

    The error state is ``[x - x_hat (5 entries), p]`` (``p`` only for the
    dynamic estimator).  Returns ``(F, E)`` with
    ``xi' = F xi + E v`` where ``v`` is the 2-entry output disturbance seen by
    the model error (zero for unsampled channels).
    """
    A, _, G_w, C = composite_matrices(model)
    dynamic = isinstance(est, CaseStudyEstimator)
    n = A.shape[0] + (1 if dynamic else 0)
    # w = We e + wp p, e = C x_err + v
    We = np.zeros((model.n_w, 2))
    wp = np.zeros(model.n_w)
    off = model.n_w - 3
    We[off:, 1] = est.L_g
    if attitude_step:
        if dynamic:
            We[W_G, 0] = est.l_q
            wp[W_G] = est.m_q
        else:
            We[0, 0], We[1, 0] = est.L_q
    F = np.zeros((n, n))
    E = np.zeros((n, 2))
    F[:5, :5] = A - G_w @ We @ C
    E[:5] = -G_w @ We
    if dynamic:
        F[:5, 5] = -G_w @ wp
        if attitude_step:
            F[5, :5] = C[0]
            F[5, 5] = 1.0 - est.beta_q
            E[5, 0] = 1.0
        else:
            F[5, 5] = 1.0
    return F, E


def predictor_monodromy(model: EmbeddedModel, est):
    """Full predictor error transition over one attitude period (lifted system)."""
    F_att, _ = predictor_step_matrices(model, est, True)
    F_idle, _ = predictor_step_matrices(model, est, False)
    M = F_att
    for _ in range(est.n_q - 1):
        M = F_idle @ M
    return M


def per_step_spectral_radius(model, est):
    """Spectral radius of the lifted predictor, converted back to one base step."""
    return spectral_radius(predictor_monodromy(model, est)) ** (1.0 / est.n_q)

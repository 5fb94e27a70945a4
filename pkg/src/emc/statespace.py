"""Linear state-space machinery shared by the model, estimator and analysis code.

Discrete systems follow ``x(i+1) = A x(i) + B u(i)``, ``y(i) = C x(i) + D u(i)``
with a step ``dt`` in seconds.  Frequencies are always in Hz and mapped to the
unit circle through ``z = exp(j 2 pi f dt)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

__all__ = [
    "DimensionError",
    "PlacementError",
    "SingularityError",
    "ContinuousLTI",
    "DiscreteLTI",
    "as_matrix",
    "simulate",
    "eigenvalues",
    "charpoly",
    "poly_from_roots",
    "ctrb",
    "obsv",
    "place_siso",
    "zoh_discretize",
    "freq_response",
    "series",
    "spectral_radius",
]


class DimensionError(ValueError):
    """Matrix or vector shapes are incompatible."""


class PlacementError(ValueError):
    """Eigenvalue assignment is infeasible (uncontrollable/unobservable pair)."""


class SingularityError(ArithmeticError):
    """A resolvent was evaluated on top of a pole."""


def as_matrix(M, rows=None, cols=None, name="matrix", allow_empty=False):
    """Coerce ``M`` to a finite 2-D float array, optionally checking its shape."""
    arr = np.atleast_2d(np.asarray(M, dtype=float))
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0 and not allow_empty:
        raise DimensionError(f"{name} is empty")
    if rows is not None and arr.shape[0] != rows:
        raise DimensionError(f"{name} must have {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise DimensionError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _check_abcd(A, B, C, D):
    A = as_matrix(A, name="A")
    n = A.shape[0]
    if A.shape[1] != n:
        raise DimensionError(f"A must be square, got {A.shape}")
    B = as_matrix(B, rows=n, name="B")
    C = as_matrix(C, cols=n, name="C")
    m, p = B.shape[1], C.shape[0]
    if D is None:
        D = np.zeros((p, m))
    D = as_matrix(D, rows=p, cols=m, name="D")
    return A, B, C, D


@dataclass(frozen=True)
class ContinuousLTI:
    """Continuous-time realization ``dx/dt = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = None

    def __post_init__(self):
        A, B, C, D = _check_abcd(self.A, self.B, self.C, self.D)
        for name, val in zip("ABCD", (A, B, C, D)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def nstates(self):
        return self.A.shape[0]

    def evaluate(self, s):
        """Transfer matrix ``C (sI - A)^-1 B + D`` at the complex point ``s``."""
        n = self.nstates
        return self.C @ np.linalg.solve(s * np.eye(n) - self.A, self.B) + self.D


@dataclass(frozen=True)
class DiscreteLTI:
    """Discrete-time realization with step ``dt`` seconds."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = None
    dt: float = 1.0

    def __post_init__(self):
        A, B, C, D = _check_abcd(self.A, self.B, self.C, self.D)
        if not self.dt > 0:
            raise ValueError(f"step must be positive, got {self.dt}")
        for name, val in zip("ABCD", (A, B, C, D)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def nstates(self):
        return self.A.shape[0]

    @property
    def ninputs(self):
        return self.B.shape[1]

    @property
    def noutputs(self):
        return self.C.shape[0]


def simulate(sys: DiscreteLTI, x0, inputs):
    """Step a discrete system through an input sequence.

    Parameters
    ----------
    sys : DiscreteLTI
    x0 : array_like, shape (n,)
        Initial state.
    inputs : array_like, shape (steps, m)
        One input vector per step.  A 1-D sequence is accepted for
        single-input systems.

    Returns
    -------
    states : ndarray, shape (steps + 1, n)
        ``x(0) .. x(steps)``.
    outputs : ndarray, shape (steps, p)
        ``y(0) .. y(steps - 1)``.
    """
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape[0] != sys.nstates:
        raise DimensionError(f"x0 has {x.shape[0]} entries, system has {sys.nstates} states")
    u = np.asarray(inputs, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, 1) if sys.ninputs == 1 else u.reshape(1, -1)
    if u.ndim != 2 or u.shape[1] != sys.ninputs:
        raise DimensionError(f"inputs must have {sys.ninputs} columns, got shape {u.shape}")

    steps = u.shape[0]
    states = np.empty((steps + 1, sys.nstates))
    outputs = np.empty((steps, sys.noutputs))
    states[0] = x
    for i in range(steps):
        outputs[i] = sys.C @ x + sys.D @ u[i]
        x = sys.A @ x + sys.B @ u[i]
        states[i + 1] = x
    return states, outputs


def eigenvalues(A, cluster_tol=None):
    """Eigenvalues of a square matrix (dense QR iteration via LAPACK).

    A defective eigenvalue of multiplicity ``k`` is only resolved to about
    ``eps**(1/k)``.  With ``cluster_tol`` set, eigenvalues closer than the
    tolerance are grouped and each member is replaced by the group mean,
    which stays accurate to working precision.
    """
    A = as_matrix(A, name="A")
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"eigenvalues need a square matrix, got {A.shape}")
    lam = np.linalg.eigvals(A)
    if cluster_tol is None:
        return lam
    lam = lam.astype(complex)
    labels = -np.ones(lam.size, dtype=int)
    for i in range(lam.size):
        if labels[i] < 0:
            labels[i] = i
            stack = [i]
            while stack:
                j = stack.pop()
                near = np.flatnonzero((labels < 0) & (np.abs(lam - lam[j]) <= cluster_tol))
                labels[near] = i
                stack.extend(near.tolist())
    out = lam.copy()
    for lab in np.unique(labels):
        members = labels == lab
        out[members] = lam[members].mean()
    return np.real_if_close(out, tol=1000)


def spectral_radius(A):
    return float(np.max(np.abs(eigenvalues(A))))


def charpoly(A):
    """Monic characteristic polynomial of ``A``, highest degree first.

    Computed with the Faddeev-LeVerrier recursion, which is exact for the
    small integer-structured matrices used here and avoids forming roots.
    """
    A = as_matrix(A, name="A")
    n = A.shape[0]
    if A.shape[1] != n:
        raise DimensionError(f"charpoly needs a square matrix, got {A.shape}")
    coeffs = np.empty(n + 1)
    coeffs[0] = 1.0
    M = np.zeros_like(A)
    eye = np.eye(n)
    for k in range(1, n + 1):
        M = A @ M + coeffs[k - 1] * eye
        coeffs[k] = -np.trace(A @ M) / k
    return coeffs


def poly_from_roots(roots):
    """Real monic polynomial with the given roots (complex roots in conjugate pairs)."""
    p = np.poly(np.asarray(roots))
    return np.real_if_close(p, tol=1000).astype(float)


def ctrb(A, B):
    """Controllability matrix ``[B, AB, ..., A^(n-1) B]``."""
    A = as_matrix(A, name="A")
    B = as_matrix(B, rows=A.shape[0], name="B")
    blocks = [B]
    for _ in range(1, A.shape[0]):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def obsv(A, C):
    """Observability matrix ``[C; CA; ...; C A^(n-1)]``."""
    A = as_matrix(A, name="A")
    C = as_matrix(C, cols=A.shape[0], name="C")
    blocks = [C]
    for _ in range(1, A.shape[0]):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def _polyvalm(coeffs, A):
    result = np.zeros_like(A)
    eye = np.eye(A.shape[0])
    for c in coeffs:
        result = result @ A + c * eye
    return result


def place_siso(A, inject, desired, side="controller"):
    """Single-channel eigenvalue assignment by Ackermann's formula.

    Parameters
    ----------
    A : array_like, shape (n, n)
    inject : array_like
        Input column ``b`` (controller side) or output row ``c`` (observer side).
    desired : array_like, shape (n + 1,)
        Monic target characteristic polynomial, highest degree first.
    side : {"controller", "observer"}
        ``"controller"`` returns the row ``k`` with ``charpoly(A - b k) = desired``;
        ``"observer"`` returns the column ``l`` with ``charpoly(A - l c) = desired``.

    Returns
    -------
    ndarray
        Gain row of shape (1, n) for the controller side, column (n, 1) for
        the observer side.
    """
    A = as_matrix(A, name="A")
    n = A.shape[0]
    if A.shape[1] != n:
        raise DimensionError(f"A must be square, got {A.shape}")
    desired = np.asarray(desired, dtype=float).reshape(-1)
    if desired.shape[0] != n + 1:
        raise DimensionError(f"desired polynomial has degree {desired.shape[0] - 1}, need {n}")
    if abs(desired[0] - 1.0) > 1e-12:
        raise ValueError("desired polynomial must be monic")

    if side == "observer":
        c = as_matrix(inject, name="inject").reshape(1, -1)
        if c.shape[1] != n:
            raise DimensionError(f"output row must have {n} entries")
        return place_siso(A.T, c.T, desired, side="controller").T
    if side != "controller":
        raise ValueError(f"side must be 'controller' or 'observer', got {side!r}")

    b = as_matrix(inject, name="inject").reshape(-1, 1)
    if b.shape[0] != n:
        raise DimensionError(f"input column must have {n} entries")
    Wc = ctrb(A, b)
    if np.linalg.matrix_rank(Wc) < n:
        raise PlacementError("pair is not controllable; eigenvalues cannot be assigned")
    last = np.zeros((1, n))
    last[0, -1] = 1.0
    return last @ np.linalg.solve(Wc, _polyvalm(desired, A))


def zoh_discretize(sys: ContinuousLTI, dt):
    """Exact zero-order-hold equivalent of a continuous system.

    Uses the exponential of the augmented matrix ``[[A, B], [0, 0]] * dt``.
    """
    if not dt > 0:
        raise ValueError(f"step must be positive, got {dt}")
    n, m = sys.B.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = sys.A
    aug[:n, n:] = sys.B
    phi = expm(aug * dt)
    return DiscreteLTI(phi[:n, :n], phi[:n, n:], sys.C, sys.D, dt)


def freq_response(sys: DiscreteLTI, f):
    """Transfer matrix of a discrete system at frequency ``f`` Hz.

    Returns ``C (zI - A)^-1 B + D`` at ``z = exp(j 2 pi f dt)`` as a complex
    array of shape (p, m).  ``f`` must not exceed the Nyquist limit.
    """
    f = float(f)
    nyquist = 0.5 / sys.dt
    if abs(f) > nyquist * (1 + 1e-12):
        raise ValueError(f"|f| = {abs(f)} Hz exceeds the Nyquist limit {nyquist} Hz")
    z = np.exp(2j * np.pi * f * sys.dt)
    poles = eigenvalues(sys.A)
    if np.min(np.abs(poles - z)) <= 1e-12 * max(1.0, np.max(np.abs(poles))):
        raise SingularityError(f"pole on the unit circle at f = {f} Hz")
    n = sys.nstates
    return sys.C @ np.linalg.solve(z * np.eye(n) - sys.A, sys.B.astype(complex)) + sys.D


def series(first: DiscreteLTI, second: DiscreteLTI):
    """Series connection: the output of ``first`` drives ``second``."""
    if first.noutputs != second.ninputs:
        raise DimensionError("output count of first system must equal input count of second")
    n1, n2 = first.nstates, second.nstates
    A = np.block([[first.A, np.zeros((n1, n2))], [second.B @ first.C, second.A]])
    B = np.vstack([first.B, second.B @ first.D])
    C = np.hstack([second.D @ first.C, second.C])
    D = second.D @ first.D
    return DiscreteLTI(A, B, C, D, first.dt)

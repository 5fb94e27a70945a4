"""Uncertain single-axis spacecraft used as the plant surrogate.

The rigid body (inertia ``J0 (1 + dJ)``, friction pole ``1/tau``) drives a
lightly damped flexible link that carries the attitude sensor::

    theta'' = -theta'/tau + a_u/(1 + dJ) + d_exo
    q_s''   = w_f**2 (theta - q_s) - 2 zeta_f w_f q_s'

``a_u = u / J0`` is the commanded acceleration the embedded model believes
in.  The gyro sits on the rigid body, the attitude sensor after the flexible
link.  State order is ``[theta, omega, q_s, q_s']`` in SI units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .statespace import ContinuousLTI, DiscreteLTI, zoh_discretize

__all__ = [
    "DesignModelParams",
    "ParamRanges",
    "SensorModel",
    "DisturbanceProfile",
    "Plant",
    "PlantState",
    "continuous_plant",
    "build_plant",
    "plant_transfer",
    "make_plant",
    "measure",
    "step_plant",
    "disturbance_profile",
    "sample_params",
    "worst_corner",
    "true_disturbance",
    "transmitted_acceleration",
    "ATTITUDE_SENSOR",
    "GYRO",
]


@dataclass(frozen=True)
class DesignModelParams:
    """Physical parameters; bounds are enforced unless ``allow_out_of_range`` is set."""

    J0: float = 1200.0
    dJ: float = 0.0
    omega_f: float = 6.0
    zeta_f: float = 0.002
    tau: float = 60.0
    allow_out_of_range: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not self.J0 > 0:
            raise ValueError("J0 must be positive")
        if not (self.omega_f > 0 and self.zeta_f >= 0 and self.tau > 0 and self.dJ > -1):
            raise ValueError(f"non-physical parameters: {self}")
        if self.allow_out_of_range:
            return
        if abs(self.dJ) > 0.2 + 1e-12:
            raise ValueError(f"|dJ| must not exceed 0.2, got {self.dJ}")
        if self.omega_f < 6.0 - 1e-12:
            raise ValueError(f"omega_f must be >= 6 rad/s, got {self.omega_f}")
        if self.zeta_f < 0.002 - 1e-15:
            raise ValueError(f"zeta_f must be >= 0.002, got {self.zeta_f}")
        if self.tau > 60.0 + 1e-12:
            raise ValueError(f"tau must be <= 60 s, got {self.tau}")

    def as_dict(self):
        return {"J0": self.J0, "dJ": self.dJ, "omega_f": self.omega_f, "zeta_f": self.zeta_f, "tau": self.tau}


@dataclass(frozen=True)
class ParamRanges:
    """Closed uniform ranges ``(low, high)`` of the uncertain parameters."""

    dJ: tuple = (-0.2, 0.2)
    omega_f: tuple = (6.0, 30.0)
    zeta_f: tuple = (0.002, 0.02)
    tau: tuple = (20.0, 60.0)

    def __post_init__(self):
        for name in ("dJ", "omega_f", "zeta_f", "tau"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"empty range for {name}: ({lo}, {hi})")
            object.__setattr__(self, name, (float(lo), float(hi)))
        # both ends must be admissible parameter values
        DesignModelParams(dJ=self.dJ[0], omega_f=self.omega_f[0], zeta_f=self.zeta_f[0], tau=self.tau[0])
        DesignModelParams(dJ=self.dJ[1], omega_f=self.omega_f[1], zeta_f=self.zeta_f[1], tau=self.tau[1])

    def corners(self, J0=1200.0):
        out = []
        for dJ in self.dJ:
            for wf in self.omega_f:
                for z in self.zeta_f:
                    for tau in self.tau:
                        out.append(DesignModelParams(J0, dJ, wf, z, tau))
        return out


def worst_corner(J0=1200.0):
    """Lightest body, softest and least damped link, weakest friction bound."""
    return DesignModelParams(J0=J0, dJ=-0.2, omega_f=6.0, zeta_f=0.002, tau=60.0)


@dataclass(frozen=True)
class SensorModel:
    """Bias, white-noise RMS and random-walk increment RMS per sample (SI units)."""

    bias: float
    noise_rms: float
    rate_hz: float
    drift_rms: float = 0.0

    def __post_init__(self):
        if min(self.noise_rms, self.drift_rms) < 0 or not self.rate_hz > 0:
            raise ValueError(f"invalid sensor model {self}")


ATTITUDE_SENSOR = SensorModel(bias=0.1e-3, noise_rms=0.5e-3, rate_hz=10.0)
GYRO = SensorModel(bias=0.01e-3, noise_rms=0.1e-3, rate_hz=100.0, drift_rms=0.001e-3)


@dataclass(frozen=True)
class DisturbanceProfile:
    """Exogenous acceleration ``constant + amplitude sin(2 pi f t + phase)`` (rad/s**2)."""

    constant: float = 2e-4
    amplitude: float = 1e-4
    freq_hz: float = 1e-3
    phase: float = 0.0


def disturbance_profile(profile: DisturbanceProfile, t):
    return profile.constant + profile.amplitude * np.sin(2 * np.pi * profile.freq_hz * t + profile.phase)


def continuous_plant(params: DesignModelParams):
    """Continuous realization; inputs ``[a_u, d_exo]``, outputs ``[q_s, omega]``."""
    wf, z, tau = params.omega_f, params.zeta_f, params.tau
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -1.0 / tau, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [wf * wf, 0.0, -wf * wf, -2.0 * z * wf],
    ])
    B = np.array([[0.0, 0.0], [1.0 / (1.0 + params.dJ), 1.0], [0.0, 0.0], [0.0, 0.0]])
    C = np.array([[0.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    return ContinuousLTI(A, B, C)


def build_plant(params: DesignModelParams, dt=0.01):
    """Zero-order-hold discretization of :func:`continuous_plant`."""
    return zoh_discretize(continuous_plant(params), dt)


def plant_transfer(params: DesignModelParams, s):
    """Attitude response to commanded acceleration, ``1/((1+dJ) s (s+1/tau) (v^2+2 zeta v+1))``."""
    v = s / params.omega_f
    return 1.0 / ((1.0 + params.dJ) * s * (s + 1.0 / params.tau) * (v * v + 2 * params.zeta_f * v + 1.0))


@dataclass(frozen=True)
class Plant:
    params: DesignModelParams
    sys: DiscreteLTI
    attitude: SensorModel = ATTITUDE_SENSOR
    gyro: SensorModel = GYRO
    n_q: int = 10

    @property
    def dt(self):
        return self.sys.dt


def make_plant(params=None, dt=0.01, attitude=ATTITUDE_SENSOR, gyro=GYRO):
    params = DesignModelParams() if params is None else params
    n_q = max(1, int(round(1.0 / (attitude.rate_hz * dt))))
    return Plant(params, build_plant(params, dt), attitude, gyro, n_q)


@dataclass(frozen=True)
class PlantState:
    x: np.ndarray
    drift: float = 0.0
    i: int = 0


def measure(plant: Plant, state: PlantState, rng):
    """Sensor outputs at the current step, SI units, attitude masked when unsampled.

    Draws two standard normals (gyro noise, attitude noise) from ``rng``.
    """
    z = rng.standard_normal(2)
    gyro = state.x[1] + plant.gyro.bias + state.drift + plant.gyro.noise_rms * z[0]
    att = state.x[2] + plant.attitude.bias + plant.attitude.noise_rms * z[1]
    sampled = state.i % plant.n_q == 0
    return np.ma.masked_array([att if sampled else 0.0, gyro], mask=[not sampled, False])


def step_plant(plant: Plant, state: PlantState, u, d_exo, rng):
    """Advance one step under held command acceleration ``u`` and disturbance ``d_exo``.

    Draws the gyro drift increment, then the sensor noises of the new step.
    Returns the new state and its measurements.
    """
    z = rng.standard_normal()
    x = plant.sys.A @ state.x + plant.sys.B @ np.array([float(u), float(d_exo)])
    nxt = PlantState(x, state.drift + plant.gyro.drift_rms * z, state.i + 1)
    return nxt, measure(plant, nxt, rng)


def true_disturbance(params: DesignModelParams, omega, a_u, d_exo):
    """Acceleration the rigid model ignores: exogenous + friction + inertia error."""
    return d_exo - omega / params.tau + a_u * (1.0 / (1.0 + params.dJ) - 1.0)


def transmitted_acceleration(params: DesignModelParams, x):
    """Acceleration transmitted by the flexible link to the sensor head, ``q_s''``."""
    x = np.asarray(x)
    wf = params.omega_f
    return wf * wf * (x[..., 0] - x[..., 2]) - 2.0 * params.zeta_f * wf * x[..., 3]


def sample_params(rng, ranges: ParamRanges, J0=1200.0):
    """Uniform draw of ``(dJ, omega_f, zeta_f, tau)`` over ``ranges``."""
    draws = [float(rng.uniform(lo, hi)) for lo, hi in (ranges.dJ, ranges.omega_f, ranges.zeta_f, ranges.tau)]
    return DesignModelParams(J0, *draws)

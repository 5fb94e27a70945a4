"""Embedded model control: model-based attitude control with disturbance estimation.

Modules
-------
statespace
    Discrete/continuous LTI primitives, eigenvalue placement, ZOH, frequency response.
embedded_model
    The real-time model: controllable plus disturbance dynamics.
noise_estimator
    Static and dynamic noise estimators, tuned by eigenvalue placement.
control
    Sylvester solution, control law, reference profiles and error bookkeeping.
plant
    Uncertain flexible single-axis spacecraft used as simulated plant.
analysis
    Sensitivities, fractional error dynamics and small-gain checks.
harness
    Closed-loop runs, gamma sweeps, Monte Carlo campaigns and export.
"""

__version__ = "0.1.0"

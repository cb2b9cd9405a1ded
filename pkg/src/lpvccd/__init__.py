"""Control co-design toolkit: LPV models over wind speed and plant geometry,
direct-transcription optimal control via sparse quadratic programming, and
LCOE-driven design sweeps for a floating wind turbine surrogate."""

from lpvccd.statespace import (
    OperatingPoint,
    StateSpaceModel,
    Trajectory,
    eigenvalues,
    frequency_response,
    hinf_error,
    simulate_lti,
)

__all__ = [
    "OperatingPoint",
    "StateSpaceModel",
    "Trajectory",
    "eigenvalues",
    "frequency_response",
    "hinf_error",
    "simulate_lti",
]

__version__ = "0.1.0"

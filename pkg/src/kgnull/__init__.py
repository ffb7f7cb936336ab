"""Spectral simulation of coupled Klein-Gordon systems with null-form couplings."""
from .spectral import GridSpec, GridMismatchError
from .system import T0, BumpSpec, CouplingTensors, FieldState, make_initial_data
from .integrator import NumericalFailure, StepParams, evolve

__all__ = [
    "GridSpec",
    "GridMismatchError",
    "T0",
    "BumpSpec",
    "CouplingTensors",
    "FieldState",
    "make_initial_data",
    "NumericalFailure",
    "StepParams",
    "evolve",
]

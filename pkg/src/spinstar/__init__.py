"""Dynamics and non-Markovianity of a central spin coupled to a damped spin star."""

from .core import (
    BlochAngles,
    DampingBasis,
    Flat,
    Lorentzian,
    ModelParams,
    NumericalError,
    QubitState,
    ValidationError,
    bloch_to_state,
    bloch_vector,
    single_spin_damping_basis,
    trace_distance,
)
from .blp import CandidateSet, GridSearch, GridSpec, Hybrid, nm_measure
from .engine import ReducedMap, build_generator, enumerate_classes
from .kernels import amplitude_flat, amplitude_lorentzian, kernel_params, scaling_map

__version__ = "0.1.0"

__all__ = [
    "BlochAngles", "DampingBasis", "Flat", "Lorentzian", "ModelParams", "NumericalError", "QubitState",
    "ValidationError", "bloch_to_state", "bloch_vector", "single_spin_damping_basis", "trace_distance",
    "CandidateSet", "GridSearch", "GridSpec", "Hybrid", "nm_measure", "ReducedMap", "build_generator",
    "enumerate_classes", "amplitude_flat", "amplitude_lorentzian", "kernel_params", "scaling_map",
]

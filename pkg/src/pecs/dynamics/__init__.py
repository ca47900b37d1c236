"""Rate-equation emitter models: construction, simulation and photon-stream sampling."""

from .emitters import multi_emitter_g2_zero
from .gillespie import generate_photon_stream, remove_dead_time
from .model import (
    EigenDecomposition,
    RateModel,
    SimulationResult,
    default_time_grid,
    eigenrates,
    initial_condition,
    photoluminescence,
    simulate_g2,
    steady_state,
)
from .spin import SpinParams, eigenbasis, hamiltonian, manifold_overlap, overlap_matrix, spin_mixing
from .templates import TEMPLATES, build_model, two_level

__all__ = [
    "EigenDecomposition", "RateModel", "SimulationResult", "SpinParams", "TEMPLATES",
    "build_model", "default_time_grid", "eigenbasis", "eigenrates", "generate_photon_stream",
    "hamiltonian", "initial_condition", "manifold_overlap", "multi_emitter_g2_zero", "overlap_matrix",
    "photoluminescence", "remove_dead_time", "simulate_g2", "spin_mixing", "steady_state", "two_level",
]

"""Semiclassical Maxwell-Schroedinger co-simulation of a transmission line
and a superconducting qubit."""
__version__ = "0.1.0"

from .analysis import (extract_dispersive_shift, fit_exponential_decay,
                       perturbation_dispersive_oracle, reflection_spectrum, resonator_q_oracle,
                       track_oscillation_frequency)
from .coupler import (CoupledConfig, Pulse, Recorder, Simulation, calibrate_pulse_area,
                      run_coupled)
from .eigen import EigenBasis, ReducedModel, build_reduced_model, solve_eigenbasis
from .qubit import QubitSpec, assemble_operators
from .txline import LineSpec, assemble_line, build_line_mesh

__all__ = ["CoupledConfig", "EigenBasis", "LineSpec", "Pulse", "QubitSpec", "Recorder",
           "ReducedModel", "Simulation", "assemble_line", "assemble_operators",
           "build_line_mesh", "build_reduced_model", "calibrate_pulse_area",
           "extract_dispersive_shift", "fit_exponential_decay", "perturbation_dispersive_oracle",
           "reflection_spectrum", "resonator_q_oracle", "run_coupled", "solve_eigenbasis",
           "track_oscillation_frequency"]

"""Sparse identification of delay differential equations from time series."""

__version__ = "0.1.0"

from .timeseries import DataError, NoiseSpec, TimeSeries, add_noise, load_csv, shift_to_zero, write_csv
from .denoise import SmootherSpec, estimate_derivatives, evaluate_at, evaluate_many
from .library import LibrarySpec, build_library_matrix, enumerate_terms, format_term
from .sparsify import FitTrace, greedy_eliminate, masked_least_squares
from .dde_sim import (DelayModel, HistorySpec, IntegrationError, Trajectory,
                      find_periodic_history, integrate, sample)
from .delay_opt import (DelayGrid, FitConfig, SweepResult, ToyProblem, error_profile,
                        fit_toy, reconstruction_error, sweep)
from .models import (BioConfig, BioModel, BioProblem, EnsoSpec, delay_concentration_slope,
                     enso_model, fit_bio, generate_enso, simulate_bio, synthesize_bio)

__all__ = [
    "DataError", "NoiseSpec", "TimeSeries", "add_noise", "load_csv", "shift_to_zero",
    "write_csv", "SmootherSpec", "estimate_derivatives", "evaluate_at", "evaluate_many",
    "LibrarySpec", "build_library_matrix", "enumerate_terms", "format_term", "FitTrace",
    "greedy_eliminate", "masked_least_squares", "DelayModel", "HistorySpec",
    "IntegrationError", "Trajectory", "find_periodic_history", "integrate", "sample",
    "DelayGrid", "FitConfig", "SweepResult", "ToyProblem", "error_profile", "fit_toy",
    "reconstruction_error", "sweep", "BioConfig", "BioModel", "BioProblem", "EnsoSpec",
    "delay_concentration_slope", "enso_model", "fit_bio", "generate_enso", "simulate_bio",
    "synthesize_bio",
]

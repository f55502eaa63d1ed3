"""Gabor-frame representations of constant-coefficient evolution propagators."""

__version__ = "0.1.0"

from .tfcore import Grid, SampledField, WindowSpec, apply_multiplier, modulation_norm, stft, tf_shift, wigner
from .symbols import (OperatorSpec, Polynomial, generalized_heat, heat, hp_check, klein_gordon, nu_estimate,
                      parse_operator, propagator_symbol, wave)
from .frames import Lattice, analysis_coeffs, canonical_dual, frame_bounds, synthesis
from .gabor_matrix import GaborMatrix, MatrixAssemblyConfig, direct_matrix, multiplier_matrix, weyl_matrix_magnitudes
from .analysis import decay_fit, operator_decay, shell_envelope, sparsity_profile
from .propagate import CauchyData, build_sparse_propagator, default_data, gabor_solve, spectral_solve, sweep

__all__ = [
    "Grid", "SampledField", "WindowSpec", "apply_multiplier", "modulation_norm", "stft", "tf_shift", "wigner",
    "OperatorSpec", "Polynomial", "generalized_heat", "heat", "hp_check", "klein_gordon", "nu_estimate",
    "parse_operator", "propagator_symbol", "wave",
    "Lattice", "analysis_coeffs", "canonical_dual", "frame_bounds", "synthesis",
    "GaborMatrix", "MatrixAssemblyConfig", "direct_matrix", "multiplier_matrix", "weyl_matrix_magnitudes",
    "decay_fit", "operator_decay", "shell_envelope", "sparsity_profile",
    "CauchyData", "build_sparse_propagator", "default_data", "gabor_solve", "spectral_solve", "sweep",
]

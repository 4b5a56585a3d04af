"""Anisotropic reaction-diffusion dehomogenization."""

from .analysis import angle_to, dominant_wavelength, orientation, radial_spectrum
from .diffusion import diffusion_matrix, diffusion_tensor, selling, tensor_field
from .kinetics import (ReactionCoeffs, fastest_mode, growth_rate, production, reaction,
                       unit_wavelength, width_factor)
from .model import TuringState, default_dt, max_stable_dt, rd_step
from .pattern import Pins, binarize, channel_layout, enforce_outlet_bc, open_inlet
from .schedule import AnisotropySchedule, Phase, RDInputs, prepare_inputs, run_schedule, transfer

__all__ = [
    "angle_to", "dominant_wavelength", "orientation", "radial_spectrum",
    "diffusion_matrix", "diffusion_tensor", "selling", "tensor_field",
    "ReactionCoeffs", "fastest_mode", "growth_rate", "production", "reaction", "unit_wavelength",
    "width_factor",
    "TuringState", "default_dt", "max_stable_dt", "rd_step",
    "Pins", "binarize", "channel_layout", "enforce_outlet_bc", "open_inlet",
    "AnisotropySchedule", "Phase", "RDInputs", "prepare_inputs", "run_schedule", "transfer",
]

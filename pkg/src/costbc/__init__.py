"""Cascaded orthogonal space-time block codes for multi-hop amplify-and-forward relay networks."""

__version__ = "0.1.0"

from .analysis import (
    ber_sweep,
    fit_diversity,
    fit_slope,
    lemma1_check,
    outage_sweep,
    whiteness_report,
)
from .detection import joint_ml_detect, per_symbol_detect
from .network import NetworkConfig, build_config, preset, run_frame, simulate_batch
from .ostbc import encode, get_design, matched_filter, qam4
from .relay import get_dispersion_set, relay_transmit, validate_dispersion

__all__ = [
    "NetworkConfig",
    "ber_sweep",
    "build_config",
    "encode",
    "fit_diversity",
    "fit_slope",
    "get_design",
    "get_dispersion_set",
    "joint_ml_detect",
    "lemma1_check",
    "matched_filter",
    "outage_sweep",
    "per_symbol_detect",
    "preset",
    "qam4",
    "relay_transmit",
    "run_frame",
    "simulate_batch",
    "validate_dispersion",
    "whiteness_report",
]

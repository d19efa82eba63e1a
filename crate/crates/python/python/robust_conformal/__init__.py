"""Robust conformal prediction under bounded likelihood-ratio shift."""

from ._native import (
    Predictor,
    gamma_value,
    pac_threshold,
    robust_threshold,
    simulate_coverage,
    simulate_sensitivity,
    weighted_conformal_threshold,
    worst_case_cdf,
    worst_case_witness,
)

__all__ = [
    "Predictor",
    "gamma_value",
    "pac_threshold",
    "robust_threshold",
    "simulate_coverage",
    "simulate_sensitivity",
    "weighted_conformal_threshold",
    "worst_case_cdf",
    "worst_case_witness",
]

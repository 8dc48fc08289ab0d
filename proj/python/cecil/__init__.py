"""Cooperative edge inference for fronthaul-limited F-RAN power control."""

from ._cecil import (
    ConfigError,
    Model,
    NumericError,
    gradcheck,
    pgd,
    quantizer_selftest,
    run_experiment,
    sample_gains,
    utility,
)

__all__ = [
    "ConfigError",
    "Model",
    "NumericError",
    "gradcheck",
    "pgd",
    "quantizer_selftest",
    "run_experiment",
    "sample_gains",
    "utility",
]

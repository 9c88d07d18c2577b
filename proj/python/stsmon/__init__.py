"""Monitoring of stochastic textured surfaces."""

from ._stsmon import (
    Bundle,
    Model,
    StsmonError,
    calibrate,
    derive_seed,
    encode_png,
    generate_sar,
    inject_defect,
    power_experiment,
    read_png,
    standardize,
    to_greyscale,
    train,
)

__all__ = [
    "Bundle",
    "Model",
    "StsmonError",
    "calibrate",
    "derive_seed",
    "encode_png",
    "generate_sar",
    "inject_defect",
    "power_experiment",
    "read_png",
    "standardize",
    "to_greyscale",
    "train",
]

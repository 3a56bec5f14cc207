"""Simulation and verification lab for deterministic and stochastic
p-Laplace dynamics: scalar SDE and field SPDE integrators, empirical
Wasserstein machinery, mixing-time estimation, and closed-form bound checks.
"""

from plmx.core import ModelParams, NoiseSpec, RngStream, signed_power, hs_norm_sq, poincare_sq

__all__ = [
    "ModelParams",
    "NoiseSpec",
    "RngStream",
    "signed_power",
    "hs_norm_sq",
    "poincare_sq",
]

__version__ = "0.1.0"

"""Projection-free BDF accelerated gradient flows under a unit-length constraint."""

from .bdf import BdfScheme, bdf_coefficients, bdf_scheme, beta_coefficients, stability_condition, verify_identity
from .benchmark import run_benchmark_setup
from .fem import FeSpace, build_uniform_mesh
from .flows import FlowConfig, FlowOperators, FlowResult, Scheme, run_flow

__all__ = [
    "BdfScheme",
    "bdf_coefficients",
    "bdf_scheme",
    "beta_coefficients",
    "stability_condition",
    "verify_identity",
    "run_benchmark_setup",
    "FeSpace",
    "build_uniform_mesh",
    "FlowConfig",
    "FlowOperators",
    "FlowResult",
    "Scheme",
    "run_flow",
]

"""Obstacle problems for the p-Laplacian via tug-of-war games with noise."""

from .dpp import (
    ProblemInstance,
    ScalarField,
    SolveReport,
    alpha_beta,
    apply_T,
    initial_lower,
    initial_upper,
    residual,
    solve_dpp,
)
from .errors import (
    DataCompatibilityError,
    DegeneratePull,
    EmptyInterior,
    FatteningTooThin,
    IllegalMove,
    InvalidExponent,
    NoConvergence,
    OracleDisagreement,
    RadiusExceedsFattening,
    VanishingGradient,
)
from .geometry import DomainSpec, Grid, ball_neighborhood, build_grid, distance_to_domain

__version__ = "0.1.0"

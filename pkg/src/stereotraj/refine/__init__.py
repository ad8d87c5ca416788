"""Stereo-constraint refinement of SfM reconstructions."""

from __future__ import annotations

from dataclasses import replace

from ..recon import Reconstruction
from .problem import (
    HUBER_WIDTH,
    Evaluation,
    LeastSquaresProblem,
    ProblemState,
    RigModel,
    build_problem,
    evaluate_residuals_and_jacobian,
    huber_rho,
    huber_weights,
    quadratic_cost,
    robust_cost,
)
from .solver import RefinementReport, SolverConfig, optimize
from .stereo import Y_TOLERANCE, MonoObservation, StereoObservation, apply_scale, estimate_scale, pair_stereo_features


def refine_reconstruction(
    recon: Reconstruction,
    nominal_baseline: float = 1.0,
    *,
    y_tolerance: float = Y_TOLERANCE,
    huber_width: float = HUBER_WIDTH,
    solver: SolverConfig | None = None,
):
    """Scale a reconstruction to the nominal stereo baseline and refine it under the rig constraint.

    Returns ``(refined, report)``; ``report.scale_factor`` is the factor
    applied before optimization.
    """
    s = estimate_scale(recon, nominal_baseline)
    scaled = apply_scale(recon, s)
    stereo, mono = pair_stereo_features(scaled, y_tolerance)
    problem = build_problem(scaled, stereo, mono, RigModel(nominal_baseline), huber_width)
    refined, report = optimize(problem, solver)
    return refined, replace(report, scale_factor=s)


__all__ = [
    "HUBER_WIDTH",
    "Evaluation",
    "LeastSquaresProblem",
    "MonoObservation",
    "ProblemState",
    "RefinementReport",
    "RigModel",
    "SolverConfig",
    "StereoObservation",
    "Y_TOLERANCE",
    "apply_scale",
    "build_problem",
    "estimate_scale",
    "evaluate_residuals_and_jacobian",
    "huber_rho",
    "huber_weights",
    "optimize",
    "pair_stereo_features",
    "quadratic_cost",
    "refine_reconstruction",
    "robust_cost",
]

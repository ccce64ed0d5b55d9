"""Simulation and verification suite for exchangeable interacting
particle systems: mean-field diffusions, mean-field jump processes, and
binary-collision models, with quantitative convergence diagnostics and
exact finite-state oracles."""

__version__ = "0.1.0"

from .core import (CollisionModel, DiffusionModel, EmpiricalMeasure,
                   MeanFieldJumpModel, ParticleState, RngStream,
                   TrajectoryBundle, empirical_of, split_stream)

__all__ = [
    "CollisionModel", "DiffusionModel", "EmpiricalMeasure",
    "MeanFieldJumpModel", "ParticleState", "RngStream", "TrajectoryBundle",
    "empirical_of", "split_stream", "__version__",
]

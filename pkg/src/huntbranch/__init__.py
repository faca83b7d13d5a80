"""Simulation and verification tools for supercritical branching Markov processes
on finite state spaces: principal eigen-triples of the first-moment generator,
exact forward and spine simulations, and ensemble checks of the martingale
limit and the strong law of large numbers."""

__version__ = "0.1.0"

from .branching_law import (  # noqa: E402
    BranchingLaw,
    FiniteOffspring,
    HeavyOffspring,
    build_law,
    evaluate_gf,
    l_functional,
    mean_offspring,
    size_biased,
)
from .fixtures import get_fixture  # noqa: E402
from .forward_sim import PointMeasure, SimConfig, martingale_path, observable, simulate  # noqa: E402
from .motion import MotionModel, build_motion, sample_path, transition_density  # noqa: E402
from .spectral import build_operator, h_transform, iu_fit, principal_triple  # noqa: E402
from .spine_sim import simulate_spine, spine_decomposition_check, unit_mass_identity  # noqa: E402

__all__ = [
    "BranchingLaw", "FiniteOffspring", "HeavyOffspring", "MotionModel", "PointMeasure",
    "SimConfig", "build_law", "build_motion", "build_operator", "evaluate_gf", "get_fixture",
    "h_transform", "iu_fit", "l_functional", "martingale_path", "mean_offspring", "observable",
    "principal_triple", "sample_path", "simulate", "simulate_spine", "size_biased",
    "spine_decomposition_check", "transition_density", "unit_mass_identity",
]

"""Convex simple bilevel optimization: accelerated cutting-plane solvers,
scalarization baselines, and a reproducible benchmark harness."""

__version__ = "0.1.0"

from .aux_bound import AuxMode, AuxSequence, freeze_to_last, run_lower_apg
from .agm_bio import (
    GammaPolicy,
    GammaRegime,
    SolverConfig,
    agm_bio_step,
    build_cutting_plane,
    gamma_for,
    solve,
    step_size,
)
from .baselines import pb_apg_solve, r_apm_solve
from .geometry import (
    Ball,
    Box,
    FeasibleSet,
    Halfspace,
    NonnegOrthant,
    ProxFriendlyTerm,
    WholeSpace,
    dykstra_project,
    l1_term,
    project_ball_halfspace,
    project_halfspace,
    project_set,
    set_indicator,
    trivial_halfspace,
    zero_term,
)
from .oracles import (
    BilevelProblem,
    CompositeObjective,
    HolderParams,
    SmoothOracle,
    Truth,
    check_gradient,
    least_squares_oracle,
    quadratic_norm_oracle,
)
from .p_agm_bio import CompositeCutSet, p_agm_bio_solve, prox_step
from .trace import IterateTrace, TraceRecord

__all__ = [
    "AuxMode",
    "AuxSequence",
    "Ball",
    "BilevelProblem",
    "Box",
    "CompositeCutSet",
    "CompositeObjective",
    "FeasibleSet",
    "GammaPolicy",
    "GammaRegime",
    "Halfspace",
    "HolderParams",
    "IterateTrace",
    "NonnegOrthant",
    "ProxFriendlyTerm",
    "SmoothOracle",
    "SolverConfig",
    "TraceRecord",
    "Truth",
    "WholeSpace",
    "agm_bio_step",
    "build_cutting_plane",
    "check_gradient",
    "dykstra_project",
    "freeze_to_last",
    "gamma_for",
    "l1_term",
    "least_squares_oracle",
    "p_agm_bio_solve",
    "pb_apg_solve",
    "project_ball_halfspace",
    "project_halfspace",
    "project_set",
    "prox_step",
    "quadratic_norm_oracle",
    "r_apm_solve",
    "run_lower_apg",
    "set_indicator",
    "solve",
    "step_size",
    "trivial_halfspace",
    "zero_term",
]

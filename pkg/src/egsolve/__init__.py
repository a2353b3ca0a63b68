"""Generalized extragradient solvers for equations and monotone inclusions."""

from .directions import DirectionRule, affine, certify_kappas, eg, make_rule, past_eg
from .linops import (
    AffineMap,
    ForwardMap,
    Resolvent,
    SpectralNormError,
    probe_star_monotone,
    residual_fb,
    residual_ne,
    spectral_norm,
    tseng_hat,
)
from .prox import make_block, project_simplex, prox_l1, resolvent_l1, resolvent_simplex, resolvent_zero
from .solvers import SolverConfig, SolverState, Trace, TraceRecord, run
from .stepsizes import (
    ProblemConstants,
    best_iterate_range,
    check_interval_lemmas,
    constants_at,
    delta_threshold,
    last_iterate_range,
)

__version__ = "0.1.0"

__all__ = [
    "DirectionRule",
    "affine",
    "certify_kappas",
    "eg",
    "make_rule",
    "past_eg",
    "AffineMap",
    "ForwardMap",
    "Resolvent",
    "SpectralNormError",
    "probe_star_monotone",
    "residual_fb",
    "residual_ne",
    "spectral_norm",
    "tseng_hat",
    "make_block",
    "project_simplex",
    "prox_l1",
    "resolvent_l1",
    "resolvent_simplex",
    "resolvent_zero",
    "SolverConfig",
    "SolverState",
    "Trace",
    "TraceRecord",
    "run",
    "ProblemConstants",
    "best_iterate_range",
    "check_interval_lemmas",
    "constants_at",
    "delta_threshold",
    "last_iterate_range",
]

"""Free convolution, random matrix simulation and spectral distance tools."""

__version__ = "0.1.0"

from .freeconv import (ConvergenceError, SingularEvaluationError, SolverConfig, additive_transform,
                       contraction_probe, rectangular_transform, solve_additive_sc, solve_rectangular)
from .measures import EvaluationDomain, Measure, eps_ladder, invert_stieltjes, stieltjes_eval
from .metrics import distance_report, dst_distance, inequality_audit, trace_norm_audit
from .rmt_sim import EnsembleSpec, TailLaw, mean_stieltjes_mc

__all__ = [
    "ConvergenceError",
    "SingularEvaluationError",
    "SolverConfig",
    "EvaluationDomain",
    "Measure",
    "EnsembleSpec",
    "TailLaw",
    "additive_transform",
    "contraction_probe",
    "distance_report",
    "dst_distance",
    "eps_ladder",
    "inequality_audit",
    "invert_stieltjes",
    "mean_stieltjes_mc",
    "rectangular_transform",
    "solve_additive_sc",
    "solve_rectangular",
    "stieltjes_eval",
    "trace_norm_audit",
]

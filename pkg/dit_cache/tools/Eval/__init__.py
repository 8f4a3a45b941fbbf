"""
Eval Package
Trajectory error, router reports, heuristic baselines and comparison tables
"""

from .Core import EvalReport, evaluate_router, trajectory_errors, trajectory_mse
from .Heuristics import HeuristicKind, HeuristicSchedule, make_heuristic, random_baseline
from .Reports import compare, render_table

__all__ = [
    'EvalReport',
    'evaluate_router',
    'trajectory_errors',
    'trajectory_mse',
    'HeuristicKind',
    'HeuristicSchedule',
    'make_heuristic',
    'random_baseline',
    'compare',
    'render_table',
]

"""Invariance-based causal inference for mass-action kinetic systems.

The core is functional (spline smoothing, model enumeration, regression,
scoring, variable ranking, simulation and evaluation); :mod:`.estimators`
wraps it in scikit-learn style estimators and :mod:`.cli` exposes it on the
command line as ``ckx``.
"""

__version__ = "0.1.0"

from .kinetic_data import Dataset, Experiment, Repetition, load_dataset, validate, write_dataset
from .model_space import Model, Term, all_terms, enumerate_exhaustive, enumerate_main_effect, enumerate_metabolic
from .ode_sim import sample_dataset1, sample_dataset2, sample_dataset3
from .scoring import ScoreOptions, rank_models, score_model
from .variable_ranking import rank_variables, variable_scores
from .estimators import CausalKinetiX, SmoothingSpline, TermScreener

__all__ = [
    "__version__",
    "Dataset",
    "Experiment",
    "Repetition",
    "load_dataset",
    "write_dataset",
    "validate",
    "Term",
    "Model",
    "all_terms",
    "enumerate_exhaustive",
    "enumerate_main_effect",
    "enumerate_metabolic",
    "sample_dataset1",
    "sample_dataset2",
    "sample_dataset3",
    "ScoreOptions",
    "score_model",
    "rank_models",
    "rank_variables",
    "variable_scores",
    "CausalKinetiX",
    "SmoothingSpline",
    "TermScreener",
]

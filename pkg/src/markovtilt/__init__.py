"""Sensitivity analysis for non-monotone missing binary outcomes under a Markov restriction."""

__version__ = "0.1.0"

from markovtilt.data import Dataset, pattern_summary
from markovtilt.estimation import (
    EmpiricalEstimator,
    ForestEstimator,
    build_observed_law,
    fit_diagnostic,
)
from markovtilt.forest import ForestParams
from markovtilt.identification import (
    FullLawResult,
    expected_negative_count,
    identify_all,
    joint_probability,
    marginal_means,
)
from markovtilt.inference import (
    FunctionalSpec,
    bootstrap_ci,
    contour_grid,
    plug_in,
    sample_dataset,
    sensitivity_grid,
)
from markovtilt.law import ObservedLaw
from markovtilt.model import ModelSpec

__all__ = [
    "Dataset",
    "EmpiricalEstimator",
    "ForestEstimator",
    "ForestParams",
    "FullLawResult",
    "FunctionalSpec",
    "ModelSpec",
    "ObservedLaw",
    "bootstrap_ci",
    "build_observed_law",
    "contour_grid",
    "expected_negative_count",
    "fit_diagnostic",
    "identify_all",
    "joint_probability",
    "marginal_means",
    "pattern_summary",
    "plug_in",
    "sample_dataset",
    "sensitivity_grid",
]

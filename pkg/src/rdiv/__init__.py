"""Model-oriented two-sample testing by the risk gap of a shared minimum hypothesis."""

from .data import DataMatrix, DatasetPair, FlipMask, derive_seed, make_scenario
from .divergences import DivergenceEstimate, c2st, estimate, h_div, make_statistic, mmd_o, r_div
from .errors import InvalidArgument, ReplicaError, TrainingDiverged
from .models import Hypothesis, ModelSpec, empirical_risk, fit, grad_check, sample_loss
from .noisy import CaseStudyConfig, CaseStudyReport, run_case_study
from .testing import PermutationTestResult, PowerReport, permutation_test, type1_calibration

__version__ = "0.1.0"

__all__ = [
    "CaseStudyConfig",
    "CaseStudyReport",
    "DataMatrix",
    "DatasetPair",
    "DivergenceEstimate",
    "FlipMask",
    "Hypothesis",
    "InvalidArgument",
    "ModelSpec",
    "PermutationTestResult",
    "PowerReport",
    "ReplicaError",
    "TrainingDiverged",
    "c2st",
    "derive_seed",
    "empirical_risk",
    "estimate",
    "fit",
    "grad_check",
    "h_div",
    "make_scenario",
    "make_statistic",
    "mmd_o",
    "permutation_test",
    "r_div",
    "run_case_study",
    "sample_loss",
    "type1_calibration",
]

"""Matching and calibration estimators for nonprobability samples."""

from .calibrate import CalibrationResult, calibrate_weights, chi_square_calibrate, greg_gweights
from .errors import (
    DegenerateSampleError,
    FitError,
    InfeasibleError,
    MatchcalError,
    ParameterError,
    ParseError,
    RankError,
    SchemaError,
    StateError,
    StudyAbortedError,
)
from .estimators import EstimateReport, dr_estimator, matched_suite, total_matched, total_matched_calibrated
from .matching import MatchedSample, MatchSkeleton, nn_match, propensity_match, transfer_weights
from .montecarlo import MonteCarloSummary, StudyConfig, preset, run_study, summarize
from .population import FinitePopulation, HmtParams, generate_hmt, stratify_equal_x_total
from .regress import logistic_irls, weighted_ls
from .sampling import DesignSample, poisson_panel, srs, stsrs
from .variance import VarianceInputs, v_composite, v_pi_xp, v_xi, wr_total_covariance, wr_total_variance

__version__ = "0.1.0"

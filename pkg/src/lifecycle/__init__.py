"""Retirement consumption under deterministic and stochastic force of mortality."""

from importlib.metadata import PackageNotFoundError, version

from .calibration import CalibrationResult, calibrate
from .dfm import EconParams, consumption_path, gpv_annuity, gpv_incomplete_gamma, iwr_dfm
from .grid import SolverSettings
from .hjb import (PolicySurface, compare_theorem1, deferred_annuity, forward_annuity,
                  log_utility_policy, solve_policy, withdrawal_table)
from .kernels import BACKEND
from .mortality import (DriftCurve, GompertzCurve, GompertzParams, SfmModel,
                        conditional_survival, hazard, survival)

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

__all__ = [
    "BACKEND", "CalibrationResult", "DriftCurve", "EconParams", "GompertzCurve",
    "GompertzParams", "PolicySurface", "SfmModel", "SolverSettings", "calibrate",
    "compare_theorem1", "conditional_survival", "consumption_path", "deferred_annuity",
    "forward_annuity", "gpv_annuity", "gpv_incomplete_gamma", "hazard", "iwr_dfm",
    "log_utility_policy", "solve_policy", "survival", "withdrawal_table",
]

"""Differentially private Cox regression and cumulative-hazard estimation,
centrally and across federated servers."""

from .breslow import PrivateAtRiskProbability, PrivateBreslow, run_fdp_breslow
from .cox import PrivateCoxPH, fit_private_cox, run_cdp_cox, run_fdp_cox, run_fdp_cox_interactive
from .datagen import CoxModelSpec, simulate
from .experiments import Scenario, preset, run_scenario
from .federation import FederationConfig
from .privacy import PrivacyBudget
from .survival import Dataset, ModelBounds, gradient, hessian, partial_log_likelihood

__all__ = [
    "CoxModelSpec",
    "Dataset",
    "FederationConfig",
    "ModelBounds",
    "PrivacyBudget",
    "PrivateAtRiskProbability",
    "PrivateBreslow",
    "PrivateCoxPH",
    "Scenario",
    "fit_private_cox",
    "gradient",
    "hessian",
    "partial_log_likelihood",
    "preset",
    "run_cdp_cox",
    "run_fdp_breslow",
    "run_fdp_cox",
    "run_fdp_cox_interactive",
    "run_scenario",
    "simulate",
]

__version__ = "0.1.0"

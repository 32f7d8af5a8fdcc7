"""User-level label-differentially-private reward estimation for BTL/PL data."""

from upldp.api.estimator import estimator, fit
from upldp.api.harness import (
    ExperimentSpec,
    ResultRow,
    TheoryBounds,
    effective_noise_report,
    run_experiment,
    theory_curves,
)
from upldp.core.accountant import (
    NoisePlan,
    PrivacyBudget,
    group_privacy_budget,
    privacy_account,
)
from upldp.core.aup import AupConfig, AupStageConfig, adap_user_priv_sgd, aup_rlhf_fit
from upldp.core.data import Dataset, GenConfig, TrueModel, generate, generate_kwise
from upldp.core.estimators import (
    FitConfig,
    FitResult,
    fit_group_privacy,
    fit_mle,
    fit_rr,
    fit_userwise_dpsgd,
)
from upldp.core.model import KWiseItem, ModelConfig, PreferenceItem, UserRecord
from upldp.types import DataKind, EstimatorName

__all__ = (
    "AupConfig",
    "AupStageConfig",
    "DataKind",
    "Dataset",
    "EstimatorName",
    "ExperimentSpec",
    "FitConfig",
    "FitResult",
    "GenConfig",
    "KWiseItem",
    "ModelConfig",
    "NoisePlan",
    "PreferenceItem",
    "PrivacyBudget",
    "ResultRow",
    "TheoryBounds",
    "TrueModel",
    "UserRecord",
    "adap_user_priv_sgd",
    "aup_rlhf_fit",
    "effective_noise_report",
    "estimator",
    "fit",
    "fit_group_privacy",
    "fit_mle",
    "fit_rr",
    "fit_userwise_dpsgd",
    "generate",
    "generate_kwise",
    "group_privacy_budget",
    "privacy_account",
    "run_experiment",
    "theory_curves",
)

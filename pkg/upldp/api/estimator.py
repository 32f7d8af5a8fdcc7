from collections.abc import Callable, Mapping

from upldp.core.accountant import PrivacyBudget
from upldp.core.aup import DEFAULT_T_CAP, AupConfig, aup_rlhf_fit
from upldp.core.data import Dataset
from upldp.core.estimators import (
    FitConfig,
    FitResult,
    fit_group_privacy,
    fit_mle,
    fit_rr,
    fit_userwise_dpsgd,
)
from upldp.exceptions import InvalidConfig
from upldp.internal.globals import EstimatorFn, get_estimator, register_estimator
from upldp.types import EstimatorName

__all__ = (
    "AUP_OVERRIDE_KEYS",
    "estimator",
    "fit",
)

type Overrides = Mapping[str, float | int]

# Keys that tune the AUP stage schedule rather than FitConfig.
AUP_OVERRIDE_KEYS = frozenset({"k", "t_cap", "tau", "eta"})


def estimator(name: str) -> Callable[[EstimatorFn], EstimatorFn]:
    """Register a fit function under ``name``.

    Registered functions take ``(dataset, budget, config, overrides)`` and
    return a FitResult; ``fit`` looks them up by name.
    """

    def decorator(func: EstimatorFn) -> EstimatorFn:
        register_estimator(name, func)
        return func

    return decorator


def _require_budget(name: str, budget: PrivacyBudget | None) -> PrivacyBudget:
    if budget is None:
        raise InvalidConfig("budget", f"estimator '{name}' needs (epsilon, delta)")
    return budget


@estimator(EstimatorName.MLE)
def _mle(
    dataset: Dataset,
    budget: PrivacyBudget | None,
    config: FitConfig,
    overrides: Overrides,
) -> FitResult:
    return fit_mle(dataset, config)


@estimator(EstimatorName.RR)
def _rr(
    dataset: Dataset,
    budget: PrivacyBudget | None,
    config: FitConfig,
    overrides: Overrides,
) -> FitResult:
    return fit_rr(dataset, _require_budget("rr", budget), config)


@estimator(EstimatorName.USERWISE)
def _userwise(
    dataset: Dataset,
    budget: PrivacyBudget | None,
    config: FitConfig,
    overrides: Overrides,
) -> FitResult:
    return fit_userwise_dpsgd(dataset, _require_budget("userwise", budget), config)


@estimator(EstimatorName.GROUP)
def _group(
    dataset: Dataset,
    budget: PrivacyBudget | None,
    config: FitConfig,
    overrides: Overrides,
) -> FitResult:
    return fit_group_privacy(dataset, _require_budget("group", budget), config)


@estimator(EstimatorName.AUP)
def _aup(
    dataset: Dataset,
    budget: PrivacyBudget | None,
    config: FitConfig,
    overrides: Overrides,
) -> FitResult:
    budget = _require_budget("aup", budget)
    k = overrides.get("k")
    tau = overrides.get("tau")
    eta = overrides.get("eta")
    aup_config = AupConfig.from_theory(
        dataset.n_users,
        dataset.m,
        dataset.model,
        budget,
        k=None if k is None else int(k),
        t_cap=int(overrides.get("t_cap", DEFAULT_T_CAP)),
        seed=config.seed,
        tau=None if tau is None else float(tau),
        eta=None if eta is None else float(eta),
    )
    return aup_rlhf_fit(dataset, budget, aup_config)


def fit(
    name: str,
    dataset: Dataset,
    budget: PrivacyBudget | None = None,
    config: FitConfig | None = None,
    overrides: Overrides | None = None,
) -> FitResult:
    """Fit the estimator registered as ``name``."""
    fn = get_estimator(name)
    return fn(dataset, budget, config or FitConfig(), overrides or {})

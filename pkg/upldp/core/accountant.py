"""Privacy budgets and Gaussian noise calibration.

The accountant splits a total (epsilon, delta) over T iterations with the
advanced composition theorem, undoes Poisson-subsampling amplification to
get the budget of a single un-subsampled step, and calibrates the classic
Gaussian mechanism to it.
"""

import logging
import math
from dataclasses import dataclass, replace

from upldp.exceptions import InvalidConfig

__all__ = (
    "NoisePlan",
    "PrivacyBudget",
    "group_privacy_budget",
    "privacy_account",
)

logger = logging.getLogger(__name__)

# Keeps ln(1.25 / delta_base) positive when amplification is undone
# for tiny batches.
MAX_BASE_DELTA = 0.5


@dataclass(frozen=True, slots=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise InvalidConfig("epsilon", "must be positive")
        if not 0 < self.delta < 1:
            raise InvalidConfig("delta", "must lie in (0, 1)")

    def halved(self) -> "PrivacyBudget":
        return PrivacyBudget(self.epsilon / 2, self.delta / 2)


@dataclass(frozen=True, slots=True)
class NoisePlan:
    """Noise calibration for T subsampled Gaussian steps.

    ``gaussian_std`` is the per-coordinate std actually injected for a mean
    of ``n_batch`` vectors within radius ``tau`` of each other, i.e.
    (2 tau / n_batch) * sigma. ``literal_std`` is the looser closed form
    sqrt(8 tau^2 log(e^eps T / delta)) * sigma / n_batch, kept for reports.
    """

    sigma: float
    per_iter_epsilon: float
    per_iter_delta: float
    base_epsilon: float
    base_delta: float
    budget: PrivacyBudget
    n: int
    n_batch: int
    T: int
    tau: float
    gaussian_std: float
    literal_std: float

    def with_radius(self, tau: float) -> "NoisePlan":
        if not tau > 0:
            raise InvalidConfig("tau", "must be positive")
        gaussian, literal = _step_stds(
            self.sigma, tau, self.n_batch, self.budget, self.T
        )
        return replace(self, tau=tau, gaussian_std=gaussian, literal_std=literal)

    def to_dict(self) -> dict[str, float | int]:
        return {
            "sigma": self.sigma,
            "per_iter_epsilon": self.per_iter_epsilon,
            "per_iter_delta": self.per_iter_delta,
            "base_epsilon": self.base_epsilon,
            "base_delta": self.base_delta,
            "epsilon": self.budget.epsilon,
            "delta": self.budget.delta,
            "n": self.n,
            "n_batch": self.n_batch,
            "T": self.T,
            "tau": self.tau,
            "gaussian_std": self.gaussian_std,
            "literal_std": self.literal_std,
        }


def _step_stds(
    sigma: float, tau: float, n_batch: int, budget: PrivacyBudget, T: int
) -> tuple[float, float]:
    gaussian = 2.0 * tau / n_batch * sigma
    log_term = budget.epsilon + math.log(T / budget.delta)
    literal = math.sqrt(8.0 * tau * tau * log_term) * sigma / n_batch
    return gaussian, literal


def privacy_account(
    budget: PrivacyBudget, n: int, n_batch: int, T: int, *, tau: float = 1.0
) -> NoisePlan:
    """Noise multiplier making T Poisson-subsampled steps (eps, delta)-DP."""
    if n < 1:
        raise InvalidConfig("n", "must be at least 1")
    if not 1 <= n_batch <= n:
        raise InvalidConfig("n_batch", f"must lie in [1, n={n}], got {n_batch}")
    if T < 1:
        raise InvalidConfig("T", "must be at least 1")
    if not tau > 0:
        raise InvalidConfig("tau", "must be positive")

    eps, delta = budget.epsilon, budget.delta
    per_iter_eps = eps / (4.0 * math.sqrt(2.0 * T * math.log(2.0 / delta)))
    per_iter_delta = delta / (2.0 * T)
    ratio = n / n_batch
    base_eps = per_iter_eps * ratio
    base_delta = min(per_iter_delta * ratio, MAX_BASE_DELTA)
    sigma = math.sqrt(2.0 * math.log(1.25 / base_delta)) / base_eps
    gaussian, literal = _step_stds(sigma, tau, n_batch, budget, T)

    plan = NoisePlan(
        sigma=sigma,
        per_iter_epsilon=per_iter_eps,
        per_iter_delta=per_iter_delta,
        base_epsilon=base_eps,
        base_delta=base_delta,
        budget=budget,
        n=n,
        n_batch=n_batch,
        T=T,
        tau=tau,
        gaussian_std=gaussian,
        literal_std=literal,
    )
    logger.debug("Noise plan: %s", plan.to_dict())
    return plan


def group_privacy_budget(budget: PrivacyBudget, m: int) -> PrivacyBudget:
    """Item-level budget whose m-fold group guarantee gives `budget` per user."""
    if m < 1:
        raise InvalidConfig("m", "must be at least 1")
    eps_item = budget.epsilon / m
    delta_item = budget.delta * math.exp(-(budget.epsilon - eps_item)) / m
    return PrivacyBudget(eps_item, delta_item)

"""Baseline fitting procedures.

``fit_mle`` is the non-private comparator, ``fit_rr`` the randomized
response estimator on the de-biased loss, ``fit_userwise_dpsgd`` and
``fit_group_privacy`` the two DP-SGD baselines (user-level clipping vs.
item-level DP-SGD run at the group-privacy budget).
"""

import logging
import numbers
from collections.abc import Callable
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, log_expit

from upldp.core.accountant import (
    PrivacyBudget,
    group_privacy_budget,
    privacy_account,
)
from upldp.core.data import Dataset
from upldp.core.mechanisms import gaussian_vector, keep_probability, rr_flip_labels
from upldp.core.model import batch_loss, batch_user_grads, project
from upldp.exceptions import DivergenceError, InvalidConfig, UnsupportedDataset
from upldp.internal.rng import make_rng
from upldp.types import DataKind, FloatArray, IntArray, ParamVector

__all__ = (
    "FitConfig",
    "FitResult",
    "StageRecord",
    "debiased_grad",
    "debiased_loss",
    "debiased_losses",
    "fit_group_privacy",
    "fit_mle",
    "fit_rr",
    "fit_userwise_dpsgd",
)

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e3


@dataclass(frozen=True, slots=True)
class FitConfig:
    """Optimiser settings shared by every estimator.

    ``batch_users`` and ``clip`` default to all users and to L when left
    as None. ``noise_multiplier`` replaces the accountant's sigma; it exists
    for noise-free reductions and ablations.
    """

    T: int = 500
    eta: float = 1.0
    batch_users: int | None = None
    clip: float | None = None
    seed: int = 0
    max_wall_iters: int = 100_000
    noise_multiplier: float | None = None
    grad_tol: float = 1e-8
    trajectory_every: int = 10

    def __post_init__(self) -> None:
        for name in ("T", "batch_users", "seed", "max_wall_iters", "trajectory_every"):
            value = getattr(self, name)
            if value is None and name == "batch_users":
                continue
            if isinstance(value, bool) or not isinstance(value, numbers.Integral):
                raise InvalidConfig(name, f"must be an integer, got {value!r}")
        if self.T < 1:
            raise InvalidConfig("T", "must be at least 1")
        if not self.eta > 0:
            raise InvalidConfig("eta", "must be positive")
        if self.batch_users is not None and self.batch_users < 1:
            raise InvalidConfig("batch_users", "must be at least 1")
        if self.clip is not None and not self.clip > 0:
            raise InvalidConfig("clip", "must be positive")
        if self.max_wall_iters < 1:
            raise InvalidConfig("max_wall_iters", "must be at least 1")
        if self.noise_multiplier is not None and self.noise_multiplier < 0:
            raise InvalidConfig("noise_multiplier", "must be non-negative")
        if self.trajectory_every < 1:
            raise InvalidConfig("trajectory_every", "must be at least 1")

    @property
    def iterations(self) -> int:
        return min(self.T, self.max_wall_iters)


@dataclass(frozen=True, slots=True)
class StageRecord:
    n_users: int
    T: int
    tau: float
    eta: float
    halted_early: bool
    iterations_done: int
    effective_noise_std: float


@dataclass(frozen=True, slots=True, eq=False)
class FitResult:
    estimator: str
    theta_hat: ParamVector
    iterations_done: int
    halted_early: bool
    effective_noise_std: float
    loss_trajectory: tuple[float, ...]
    theta_last: ParamVector
    privacy_spent: PrivacyBudget | None = None
    stages: tuple[StageRecord, ...] = ()


def _require_pairwise(dataset: Dataset, estimator: str) -> None:
    if dataset.kind is not DataKind.PAIRWISE:
        raise UnsupportedDataset(estimator, dataset.kind.value)


def _debias_factor(epsilon: float, m: int) -> tuple[float, float]:
    if not epsilon > 0:
        raise InvalidConfig("epsilon", "must be positive")
    keep = keep_probability(epsilon, m)
    return keep, 2.0 * keep - 1.0


def debiased_losses(
    theta: ParamVector,
    features: FloatArray,
    flipped: IntArray,
    epsilon: float,
    m: int,
) -> FloatArray:
    """Per-item de-biased loss on randomized labels.

    Scaled by 1 / (2 sigma(eps/m) - 1) = (e^{eps/m} + 1) / (e^{eps/m} - 1), so
    its expectation over the randomization equals the clean loss.
    """
    keep, scale = _debias_factor(epsilon, m)
    z = features @ theta
    log_p1, log_p0 = log_expit(z), log_expit(-z)
    same = np.where(flipped == 1, log_p1, log_p0)
    other = np.where(flipped == 1, log_p0, log_p1)
    return -(keep * same - (1.0 - keep) * other) / scale


def debiased_loss(
    theta: ParamVector, flipped_dataset: Dataset, epsilon: float, m: int
) -> float:
    _require_pairwise(flipped_dataset, "rr")
    losses = debiased_losses(
        theta, flipped_dataset.features, flipped_dataset.labels, epsilon, m
    )
    return float(np.mean(losses))


def _debiased_targets(flipped: IntArray, epsilon: float, m: int) -> FloatArray:
    keep, scale = _debias_factor(epsilon, m)
    return (flipped - 1.0 + keep) / scale


def debiased_grad(
    theta: ParamVector, flipped_dataset: Dataset, epsilon: float, m: int
) -> FloatArray:
    """Gradient of ``debiased_loss``: mean of (sigma(x.theta) - y_hat) x."""
    _require_pairwise(flipped_dataset, "rr")
    targets = _debiased_targets(flipped_dataset.labels, epsilon, m)
    return _mean_residual_grad(theta, flipped_dataset.features, targets)


def _mean_residual_grad(
    theta: ParamVector, features: FloatArray, targets: FloatArray
) -> FloatArray:
    residual = expit(features @ theta) - targets
    per_user = np.einsum("um,umd->ud", residual, features) / features.shape[1]
    return np.sum(per_user, axis=0) / features.shape[0]


def _projected_descent(
    name: str,
    grad_fn: Callable[[ParamVector], FloatArray],
    loss_fn: Callable[[ParamVector], float],
    d: int,
    B: float,
    config: FitConfig,
) -> FitResult:
    """Full-batch projected gradient descent from theta = 0; last iterate."""
    theta = np.zeros(d)
    initial = loss_fn(theta)
    trajectory = [initial]
    done = 0
    for t in range(config.iterations):
        grad = grad_fn(theta)
        if float(np.linalg.norm(grad)) < config.grad_tol:
            break
        theta = project(theta - config.eta * grad, B)
        done = t + 1
        loss = loss_fn(theta)
        if loss > DIVERGENCE_FACTOR * max(abs(initial), 1e-12):
            raise DivergenceError(done, loss, initial)
        if done % config.trajectory_every == 0:
            trajectory.append(loss)
    logger.info("%s: %d iterations, final loss %.6g", name, done, loss_fn(theta))
    return FitResult(
        estimator=name,
        theta_hat=theta,
        iterations_done=done,
        halted_early=False,
        effective_noise_std=0.0,
        loss_trajectory=tuple(trajectory),
        theta_last=theta,
    )


def fit_mle(dataset: Dataset, config: FitConfig) -> FitResult:
    """Non-private maximum likelihood by projected gradient descent."""
    features, labels = dataset.features, dataset.labels
    model = dataset.model

    def grad_fn(theta: ParamVector) -> FloatArray:
        per_user = batch_user_grads(theta, features, labels)
        return np.sum(per_user, axis=0) / per_user.shape[0]

    def loss_fn(theta: ParamVector) -> float:
        return batch_loss(theta, features, labels)

    return _projected_descent("mle", grad_fn, loss_fn, model.d, model.B, config)


def fit_rr(dataset: Dataset, budget: PrivacyBudget, config: FitConfig) -> FitResult:
    """Randomized response once, then descend the de-biased loss.

    The flipped labels are the only view of the private labels; everything
    after the flip is post-processing, hence epsilon-user-level label DP.
    """
    _require_pairwise(dataset, "rr")
    eps, m = budget.epsilon, dataset.m
    rng = make_rng(config.seed)
    flipped = rr_flip_labels(dataset.labels, eps, m, rng)
    targets = _debiased_targets(flipped, eps, m)
    features = dataset.features
    model = dataset.model

    def grad_fn(theta: ParamVector) -> FloatArray:
        return _mean_residual_grad(theta, features, targets)

    def loss_fn(theta: ParamVector) -> float:
        return float(np.mean(debiased_losses(theta, features, flipped, eps, m)))

    logger.info(
        "rr: flipped %d of %d labels (eps/m = %.4g)",
        int(np.count_nonzero(flipped != dataset.labels)),
        dataset.labels.size,
        eps / m,
    )
    result = _projected_descent("rr", grad_fn, loss_fn, model.d, model.B, config)
    return replace(result, privacy_spent=budget)


def _clipped_dpsgd(
    name: str,
    features: FloatArray,
    labels: IntArray,
    budget: PrivacyBudget,
    n_batch: int,
    clip: float,
    B: float,
    config: FitConfig,
) -> tuple[ParamVector, ParamVector, int, float, list[float]]:
    """Poisson-subsampled DP-SGD over the leading axis of ``features``.

    Each row (a user, or a single item for item-level runs) contributes one
    averaged gradient clipped to ``clip``; the clipped sum is divided by the
    expected batch size and perturbed with N(0, sigma^2 clip^2 / n_batch^2).
    """
    n, d = features.shape[0], features.shape[-1]
    if n_batch > n:
        raise InvalidConfig("batch_users", f"must not exceed {n}")
    T = config.iterations
    if config.noise_multiplier is None:
        sigma = privacy_account(budget, n, n_batch, T).sigma
    else:
        sigma = config.noise_multiplier
    std = sigma * clip / n_batch
    rate = n_batch / n
    rng = make_rng(config.seed)

    theta = np.zeros(d)
    iterate_sum = np.zeros(d)
    trajectory = [batch_loss(theta, features, labels)]
    for t in range(T):
        batch = np.flatnonzero(rng.random(n) < rate)
        total = np.zeros(d)
        if batch.size:
            grads = batch_user_grads(theta, features[batch], labels[batch])
            norms = np.linalg.norm(grads, axis=1)
            grads = grads / np.maximum(1.0, norms / clip)[:, None]
            total = np.sum(grads, axis=0)
        step = total / n_batch
        if std > 0:
            step = step + gaussian_vector(std, d, rng)
        theta = project(theta - config.eta * step, B)
        iterate_sum += theta
        if (t + 1) % config.trajectory_every == 0:
            trajectory.append(batch_loss(theta, features, labels))
    logger.info("%s: %d iterations, noise std %.6g", name, T, std)
    return iterate_sum / T, theta, T, std, trajectory


def fit_userwise_dpsgd(
    dataset: Dataset, budget: PrivacyBudget, config: FitConfig
) -> FitResult:
    """User-wise DP-SGD: clip each sampled user's averaged gradient."""
    model = dataset.model
    n_batch = config.batch_users or dataset.n_users
    clip = config.clip if config.clip is not None else model.L
    theta_hat, theta_last, done, std, trajectory = _clipped_dpsgd(
        "userwise",
        dataset.features,
        dataset.labels,
        budget,
        n_batch,
        clip,
        model.B,
        config,
    )
    return FitResult(
        estimator="userwise",
        theta_hat=theta_hat,
        iterations_done=done,
        halted_early=False,
        effective_noise_std=std,
        loss_trajectory=tuple(trajectory),
        theta_last=theta_last,
        privacy_spent=budget,
    )


def fit_group_privacy(
    dataset: Dataset, budget: PrivacyBudget, config: FitConfig
) -> FitResult:
    """Item-level DP-SGD at the budget whose m-group guarantee is `budget`."""
    model = dataset.model
    m = dataset.m
    item_budget = group_privacy_budget(budget, m)
    n_items = dataset.n_users * m
    item_shape = (n_items, 1, *dataset.features.shape[2:])
    features = dataset.features.reshape(item_shape)
    labels = dataset.labels.reshape((n_items, 1, *dataset.labels.shape[2:]))
    n_batch = (config.batch_users or dataset.n_users) * m
    clip = config.clip if config.clip is not None else model.L
    logger.debug(
        "group: item-level budget eps=%.6g delta=%.3g",
        item_budget.epsilon,
        item_budget.delta,
    )
    theta_hat, theta_last, done, std, trajectory = _clipped_dpsgd(
        "group", features, labels, item_budget, n_batch, clip, model.B, config
    )
    return FitResult(
        estimator="group",
        theta_hat=theta_hat,
        iterations_done=done,
        halted_early=False,
        effective_noise_std=std,
        loss_trajectory=tuple(trajectory),
        theta_last=theta_last,
        privacy_spent=budget,
    )


"""Adaptive user-level private SGD and the multi-stage AUP-RLHF driver.

Each step subsamples users, scores how concentrated their averaged
gradients are, gates the step with AboveThreshold, drops outliers at
random and releases a noisy mean whose noise scales with the
concentration radius tau rather than a clipping constant.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.spatial.distance import cdist

from upldp.core.accountant import NoisePlan, PrivacyBudget, privacy_account
from upldp.core.data import Dataset
from upldp.core.estimators import FitResult, StageRecord
from upldp.core.mechanisms import (
    above_threshold_init,
    above_threshold_query,
    gaussian_vector,
)
from upldp.core.model import ModelConfig, batch_loss, project
from upldp.exceptions import InvalidConfig, PartitionError
from upldp.internal.rng import make_rng
from upldp.types import Answer, FloatArray, IntArray, ParamVector

__all__ = (
    "AupConfig",
    "AupStageConfig",
    "GradientSource",
    "RetainedSet",
    "adap_user_priv_sgd",
    "aup_rlhf_fit",
    "concentration_score",
    "default_stage_count",
    "outlier_filter",
    "partition",
    "private_mean_step",
    "retention_probability",
    "stage_sizes",
)

logger = logging.getLogger(__name__)

DEFAULT_T_CAP = 2000


@runtime_checkable
class GradientSource(Protocol):
    """Read access to the private records of one stage."""

    @property
    def n_users(self) -> int: ...
    @property
    def m(self) -> int: ...
    @property
    def model(self) -> ModelConfig: ...
    def average_gradients(
        self, theta: ParamVector, indices: IntArray
    ) -> FloatArray: ...
    def loss(self, theta: ParamVector) -> float: ...


class _DatasetSource:
    """Adapts a Dataset to GradientSource."""

    __slots__ = ("_dataset",)

    def __init__(self, dataset: Dataset) -> None:
        self._dataset = dataset

    @property
    def n_users(self) -> int:
        return self._dataset.n_users

    @property
    def m(self) -> int:
        return self._dataset.m

    @property
    def model(self) -> ModelConfig:
        return self._dataset.model

    def average_gradients(self, theta: ParamVector, indices: IntArray) -> FloatArray:
        return self._dataset.average_gradients(theta, indices)

    def loss(self, theta: ParamVector) -> float:
        return batch_loss(theta, self._dataset.features, self._dataset.labels)


@dataclass(frozen=True, slots=True)
class AupStageConfig:
    T: int
    eta: float
    tau: float
    batch_users: int
    epsilon: float
    delta: float
    trajectory_every: int = 10

    def __post_init__(self) -> None:
        if self.T < 1:
            raise InvalidConfig("T", "must be at least 1")
        if not self.eta > 0:
            raise InvalidConfig("eta", "must be positive")
        if not self.tau > 0:
            raise InvalidConfig("tau", "must be positive")
        if self.batch_users < 1:
            raise InvalidConfig("batch_users", "must be at least 1")
        if self.trajectory_every < 1:
            raise InvalidConfig("trajectory_every", "must be at least 1")
        _ = self.budget

    @property
    def budget(self) -> PrivacyBudget:
        return PrivacyBudget(self.epsilon, self.delta)


@dataclass(frozen=True, slots=True)
class AupConfig:
    k: int
    stages: tuple[AupStageConfig, ...]
    t_cap: int = DEFAULT_T_CAP
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InvalidConfig("k", "must be at least 1")
        if len(self.stages) != self.k:
            raise InvalidConfig("stages", f"expected {self.k}, got {len(self.stages)}")
        if self.t_cap < self.k:
            raise InvalidConfig("t_cap", "must allow at least one step per stage")

    @classmethod
    def from_theory(
        cls,
        n: int,
        m: int,
        model: ModelConfig,
        budget: PrivacyBudget,
        *,
        k: int | None = None,
        t_cap: int = DEFAULT_T_CAP,
        seed: int = 0,
        tau: float | None = None,
        eta: float | None = None,
    ) -> "AupConfig":
        """Stage schedule with every hidden constant set to 1.

        n_i from the halving partition, full batches, T_i the theoretical
        m^2 n_i^2 + m n_i sqrt(d) capped at t_cap / k, eta_i the three-way
        minimum and tau_i = 4 L log(n_i d m e^eps T_i / delta) / sqrt(m),
        capped at L because averaged gradients already lie in the L-ball.
        """
        if k is None:
            k = default_stage_count(n, m)
        eps, delta = budget.epsilon, budget.delta
        d, B, L = model.d, model.B, model.L
        stages: list[AupStageConfig] = []
        for n_i in stage_sizes(n, k):
            t_theory = math.ceil(m * m * n_i * n_i + m * n_i * math.sqrt(d))
            T_i = max(1, min(t_theory, t_cap // k))
            log_term = math.log(n_i * d * m * T_i / delta) + eps
            tau_i = min(4 * L * log_term / math.sqrt(m), L) if tau is None else tau
            eta_i = (B / (4 * L)) * min(
                math.sqrt(m) * n_i * eps
                / (T_i * math.sqrt(d) * math.log(m * n_i * d / delta)),
                T_i ** (-0.75),
                math.sqrt(n_i * m) / T_i,
            )
            if eta is not None:
                eta_i = eta
            stages.append(
                AupStageConfig(
                    T=T_i,
                    eta=eta_i,
                    tau=tau_i,
                    batch_users=n_i,
                    epsilon=eps,
                    delta=delta,
                )
            )
        return cls(k=k, stages=tuple(stages), t_cap=t_cap, seed=seed)


@dataclass(frozen=True, slots=True)
class RetainedSet:
    indices: IntArray
    scores: FloatArray = field(default_factory=lambda: np.zeros(0))


def default_stage_count(n: int, m: int) -> int:
    """ceil(log2 log2 (mn)), at least 1 and small enough that n >= 2^k."""
    mn = m * n
    k = 1 if mn <= 2 else max(1, math.ceil(math.log2(math.log2(mn))))
    while k > 1 and n < 2**k:
        k -= 1
    return k


def stage_sizes(n: int, k: int) -> list[int]:
    """floor(n / 2^(k+1-i)) users for stage i < k; the last stage takes the rest."""
    if k < 1:
        raise InvalidConfig("k", "must be at least 1")
    if n < 2**k:
        raise PartitionError(n, k)
    sizes = [n // 2 ** (k + 1 - i) for i in range(1, k)]
    return [*sizes, n - sum(sizes)]


def partition(dataset: Dataset, k: int, rng: np.random.Generator) -> list[IntArray]:
    """Shuffle users, then slice them into k disjoint stages."""
    sizes = stage_sizes(dataset.n_users, k)
    order = rng.permutation(dataset.n_users)
    bounds = np.cumsum([0, *sizes])
    return [np.sort(order[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


def _within(grads: FloatArray, radius: float) -> FloatArray:
    return (cdist(grads, grads) <= radius).astype(np.float64)


def concentration_score(
    grads: FloatArray, tau: float, n_batch: int | None = None
) -> float:
    """Ordered pairs (i = i' included) within tau, divided by the batch size."""
    if grads.shape[0] == 0:
        raise InvalidConfig("grads", "batch is empty")
    if not tau > 0:
        raise InvalidConfig("tau", "must be positive")
    size = n_batch if n_batch is not None else grads.shape[0]
    return float(np.sum(_within(grads, tau)) / size)


def retention_probability(f: FloatArray, n_batch: int) -> FloatArray:
    return np.clip((f - n_batch / 2) / (n_batch / 6), 0.0, 1.0)


def outlier_filter(
    grads: FloatArray,
    tau: float,
    rng: np.random.Generator,
    n_batch: int | None = None,
) -> RetainedSet:
    """Keep each user with a probability set by its 2 tau neighbour count."""
    size = n_batch if n_batch is not None else grads.shape[0]
    if grads.shape[0] == 0:
        return RetainedSet(indices=np.zeros(0, dtype=np.int64))
    f = np.sum(_within(grads, 2 * tau), axis=1)
    keep = rng.random(grads.shape[0]) < retention_probability(f, size)
    return RetainedSet(indices=np.flatnonzero(keep), scores=f)


def private_mean_step(
    grads: FloatArray,
    retained: RetainedSet,
    tau: float,
    plan: NoisePlan,
    rng: np.random.Generator,
) -> FloatArray:
    """Mean of the retained gradients (zero if none) plus calibrated noise."""
    if tau != plan.tau:
        plan = plan.with_radius(tau)
    d = grads.shape[1]
    mean = np.zeros(d)
    if retained.indices.size:
        kept = grads[retained.indices]
        mean = np.sum(kept, axis=0) / kept.shape[0]
    if plan.gaussian_std > 0:
        mean = mean + gaussian_vector(plan.gaussian_std, d, rng)
    return mean


def adap_user_priv_sgd(
    theta0: ParamVector,
    users: GradientSource | Dataset,
    stage: AupStageConfig,
    rng: np.random.Generator,
) -> FitResult:
    """One adaptive user-level private SGD run; halts at the first failed test.

    The AboveThreshold gate and the Gaussian steps each get half the stage
    budget. Returns the average of the completed iterates, or theta0 when
    the first step already halts.
    """
    source = _DatasetSource(users) if isinstance(users, Dataset) else users
    n, d, B = source.n_users, source.model.d, source.model.B
    n_batch = stage.batch_users
    if n < 1:
        raise InvalidConfig("users", "stage has no users")
    if n_batch > n:
        raise InvalidConfig("batch_users", f"must not exceed {n}")

    half = stage.budget.halved()
    plan = privacy_account(half, n, n_batch, stage.T, tau=stage.tau)
    gate = above_threshold_init(4 * n_batch / 5, half.epsilon, rng)
    rate = n_batch / n

    theta = np.asarray(theta0, dtype=np.float64)
    iterate_sum = np.zeros(d)
    trajectory = [source.loss(theta)]
    done = 0
    halted = False
    for t in range(stage.T):
        batch = np.flatnonzero(rng.random(n) < rate)
        if batch.size:
            grads = source.average_gradients(theta, batch)
            score = concentration_score(grads, stage.tau, n_batch)
            if above_threshold_query(gate, score, rng) is Answer.BELOW:
                halted = True
                logger.warning(
                    "AboveThreshold halted stage at step %d (score %.3g < %.3g)",
                    t + 1,
                    score,
                    4 * n_batch / 5,
                )
                break
            retained = outlier_filter(grads, stage.tau, rng, n_batch)
        else:
            grads = np.zeros((0, d))
            retained = RetainedSet(indices=np.zeros(0, dtype=np.int64))
        step = private_mean_step(grads, retained, stage.tau, plan, rng)
        theta = project(theta - stage.eta * step, B)
        iterate_sum += theta
        done = t + 1
        if done % stage.trajectory_every == 0:
            trajectory.append(source.loss(theta))

    theta_hat = iterate_sum / done if done else np.asarray(theta0, dtype=np.float64)
    noise = plan.gaussian_std if done else 0.0
    return FitResult(
        estimator="aup",
        theta_hat=theta_hat,
        iterations_done=done,
        halted_early=halted,
        effective_noise_std=noise,
        loss_trajectory=tuple(trajectory),
        theta_last=theta,
        privacy_spent=stage.budget,
        stages=(
            StageRecord(
                n_users=n,
                T=stage.T,
                tau=stage.tau,
                eta=stage.eta,
                halted_early=halted,
                iterations_done=done,
                effective_noise_std=noise,
            ),
        ),
    )


def aup_rlhf_fit(
    dataset: Dataset, budget: PrivacyBudget, config: AupConfig
) -> FitResult:
    """Run the stages on disjoint user sets, each warm-started from the last.

    Stages see disjoint users, so by parallel composition the total spend is
    the maximum of the stage budgets, each of which is the full (eps, delta).
    """
    rng = make_rng(config.seed)
    parts = partition(dataset, config.k, rng)
    theta = np.zeros(dataset.model.d)
    theta_last = theta
    records: list[StageRecord] = []
    trajectory: list[float] = []
    spent: list[PrivacyBudget] = []
    for i, (indices, stage) in enumerate(zip(parts, config.stages), start=1):
        if stage.epsilon > budget.epsilon or stage.delta > budget.delta:
            raise InvalidConfig("stages", f"stage {i} exceeds the fit budget")
        logger.debug(
            "AUP stage %d/%d: n_i=%d T=%d tau=%.4g eta=%.4g",
            i,
            config.k,
            indices.size,
            stage.T,
            stage.tau,
            stage.eta,
        )
        result = adap_user_priv_sgd(theta, dataset.subset(indices), stage, rng)
        theta, theta_last = result.theta_hat, result.theta_last
        records.extend(result.stages)
        trajectory.extend(result.loss_trajectory)
        spent.append(stage.budget)

    steps = sum(r.iterations_done for r in records)
    noise = (
        sum(r.effective_noise_std * r.iterations_done for r in records) / steps
        if steps
        else 0.0
    )
    result = FitResult(
        estimator="aup",
        theta_hat=theta,
        iterations_done=steps,
        halted_early=any(r.halted_early for r in records),
        effective_noise_std=noise,
        loss_trajectory=tuple(trajectory),
        theta_last=theta_last,
        privacy_spent=PrivacyBudget(
            max(b.epsilon for b in spent), max(b.delta for b in spent)
        ),
        stages=tuple(records),
    )
    logger.info(
        "aup: %d stages, %d steps, halted=%s, noise std %.6g",
        config.k,
        steps,
        result.halted_early,
        noise,
    )
    return result

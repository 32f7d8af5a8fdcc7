"""Bradley-Terry-Luce and Plackett-Luce models with a linear reward.

Every function here is pure. Single-item functions (``btl_loss``,
``pl_grad``, ...) mirror the model definitions one comparison at a time;
the ``batch_*`` functions evaluate the same quantities over stacked arrays
and are what the estimators call in their inner loops.
"""

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from upldp.exceptions import (
    DimensionMismatch,
    EmptyUserRecord,
    InvalidConfig,
    InvalidPermutation,
)
from upldp.types import DataKind, FloatArray, IntArray, ParamVector

__all__ = (
    "KWiseItem",
    "ModelConfig",
    "PreferenceItem",
    "UserRecord",
    "batch_loss",
    "batch_user_grads",
    "btl_grad",
    "btl_loss",
    "btl_prob",
    "pl_grad",
    "pl_loss",
    "project",
    "sigmoid",
    "user_avg_grad",
)


@dataclass(frozen=True, slots=True)
class ModelConfig:
    d: int
    B: float
    L: float
    K: int = 2

    def __post_init__(self) -> None:
        if self.d < 2:
            raise InvalidConfig("d", "must be at least 2")
        if not self.B > 0:
            raise InvalidConfig("B", "must be positive")
        if not self.L > 0:
            raise InvalidConfig("L", "must be positive")
        if self.K < 2:
            raise InvalidConfig("K", "must be at least 2")


@dataclass(frozen=True, slots=True)
class PreferenceItem:
    """One pairwise comparison: differential feature x and label y."""

    x: FloatArray
    y: int


@dataclass(frozen=True, slots=True)
class KWiseItem:
    """K candidate feature vectors and the observed ranking.

    ``permutation[j]`` is the index of the action ranked j-th.
    """

    features: FloatArray
    permutation: IntArray

    def __post_init__(self) -> None:
        k = self.features.shape[0]
        if k < 2:
            raise InvalidConfig("K", "must be at least 2")
        if self.permutation.shape != (k,) or not np.array_equal(
            np.sort(self.permutation), np.arange(k)
        ):
            raise InvalidPermutation(self.permutation.tolist())


@dataclass(frozen=True, slots=True)
class UserRecord:
    """All m contributions of one user, stored as stacked arrays.

    Pairwise records hold ``features`` of shape (m, d) and binary ``labels``
    of shape (m,); K-wise records hold (m, K, d) features and (m, K)
    rankings.
    """

    features: FloatArray
    labels: IntArray

    @property
    def kind(self) -> DataKind:
        return DataKind.KWISE if self.features.ndim == 3 else DataKind.PAIRWISE

    @property
    def m(self) -> int:
        return int(self.features.shape[0])

    @property
    def items(self) -> Iterator[PreferenceItem | KWiseItem]:
        for j in range(self.m):
            if self.kind is DataKind.KWISE:
                yield KWiseItem(self.features[j], self.labels[j])
            else:
                yield PreferenceItem(self.features[j], int(self.labels[j]))


def sigmoid(z: float) -> float:
    return float(expit(z))


def _check_dim(theta: ParamVector, vec: FloatArray) -> None:
    if vec.shape[-1] != theta.shape[0]:
        raise DimensionMismatch(theta.shape[0], vec.shape[-1], "feature")


def btl_prob(theta: ParamVector, x: FloatArray) -> float:
    """P(y = 1 | x) under the BTL model."""
    _check_dim(theta, x)
    return float(expit(x @ theta))


def btl_loss(theta: ParamVector, item: PreferenceItem) -> float:
    """Negative log-likelihood of one pairwise label."""
    _check_dim(theta, item.x)
    z = float(item.x @ theta)
    return float(-log_expit(z if item.y == 1 else -z))


def btl_grad(theta: ParamVector, item: PreferenceItem) -> FloatArray:
    _check_dim(theta, item.x)
    return (float(expit(item.x @ theta)) - item.y) * item.x


def _ranked(features: FloatArray, permutation: IntArray) -> FloatArray:
    """Reorder candidate features (..., K, d) so position j holds rank j."""
    return np.take_along_axis(features, permutation[..., None], axis=-2)


def _pl_terms(theta: ParamVector, ranked: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Loss and gradient of the PL negative log-likelihood over (..., K, d).

    With r_j the reward of the j-th ranked action and S_j the log-sum-exp of
    r_j..r_K, the loss is sum_j (S_j - r_j) and the gradient is
    sum_k (w_k - 1) phi_k where w_k = sum_{j<=k} exp(r_k - S_j).
    """
    rewards = ranked @ theta
    suffix_lse = np.logaddexp.accumulate(rewards[..., ::-1], axis=-1)[..., ::-1]
    loss = np.sum(suffix_lse - rewards, axis=-1)

    k = rewards.shape[-1]
    below_diag = np.tril(np.ones((k, k), dtype=bool))  # [k, j] -> j <= k
    log_terms = rewards[..., :, None] - suffix_lse[..., None, :]
    terms = np.where(below_diag, np.exp(np.minimum(log_terms, 0.0)), 0.0)
    weights = np.sum(terms, axis=-1)
    grad = np.einsum("...k,...kd->...d", weights - 1.0, ranked)
    return loss, grad


def pl_loss(theta: ParamVector, item: KWiseItem) -> float:
    """Negative log-likelihood of a full ranking under Plackett-Luce."""
    _check_dim(theta, item.features)
    loss, _ = _pl_terms(theta, _ranked(item.features, item.permutation))
    return float(loss)


def pl_grad(theta: ParamVector, item: KWiseItem) -> FloatArray:
    _check_dim(theta, item.features)
    _, grad = _pl_terms(theta, _ranked(item.features, item.permutation))
    return grad


def project(theta_raw: FloatArray, B: float) -> ParamVector:
    """Euclidean projection onto {theta : <1, theta> = 0, ||theta|| <= B}."""
    if not B > 0:
        raise InvalidConfig("B", "must be positive")
    theta = np.asarray(theta_raw, dtype=np.float64)
    theta = theta - theta.mean()
    norm = float(np.linalg.norm(theta))
    if norm > B:
        theta = theta * (B / norm)
    return theta


def user_avg_grad(theta: ParamVector, user: UserRecord) -> FloatArray:
    """Average per-item gradient over one user's record."""
    if user.m == 0:
        raise EmptyUserRecord()
    _check_dim(theta, user.features)
    return batch_user_grads(theta, user.features[None], user.labels[None])[0]


def batch_user_grads(
    theta: ParamVector, features: FloatArray, labels: IntArray
) -> FloatArray:
    """User-averaged gradients for a stack of records.

    ``features`` is (u, m, d) with binary ``labels`` (u, m), or (u, m, K, d)
    with rankings (u, m, K). Returns (u, d). Sums run in a fixed order so
    results do not depend on how callers split the users.
    """
    _check_dim(theta, features)
    m = features.shape[1]
    if m == 0:
        raise EmptyUserRecord()
    if features.ndim == 4:
        _, grads = _pl_terms(theta, _ranked(features, labels))
        return np.einsum("umd->ud", grads) / m
    residual = expit(features @ theta) - labels
    return np.einsum("um,umd->ud", residual, features) / m


def batch_loss(theta: ParamVector, features: FloatArray, labels: IntArray) -> float:
    """Mean negative log-likelihood over every item of a stack of records."""
    _check_dim(theta, features)
    if features.ndim == 4:
        loss, _ = _pl_terms(theta, _ranked(features, labels))
        return float(np.mean(loss))
    z = features @ theta
    signed = np.where(labels == 1, z, -z)
    return float(-np.mean(log_expit(signed)))

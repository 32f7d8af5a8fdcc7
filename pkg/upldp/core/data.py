"""Synthetic preference data with a known ground-truth parameter."""

import logging
from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np
from scipy.special import expit

from upldp.core.model import ModelConfig, UserRecord, batch_user_grads, project
from upldp.exceptions import DimensionMismatch, InsufficientSamples, InvalidConfig
from upldp.internal.rng import make_rng
from upldp.types import DataKind, FloatArray, IntArray, ParamVector

__all__ = (
    "Dataset",
    "GenConfig",
    "TrueModel",
    "coverage_check",
    "generate",
    "generate_kwise",
    "sample_feature",
    "sample_label",
    "sample_theta_star",
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class GenConfig:
    n: int
    m: int
    d: int
    B: float = 1.0
    L: float = 1.0
    K: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise InvalidConfig("n", "must be at least 1")
        if self.m < 1:
            raise InvalidConfig("m", "must be at least 1")
        if self.seed < 0:
            raise InvalidConfig("seed", "must be non-negative")
        _ = self.model

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(d=self.d, B=self.B, L=self.L, K=self.K)


@dataclass(frozen=True, slots=True)
class TrueModel:
    theta_star: ParamVector
    config: ModelConfig


@dataclass(frozen=True, slots=True, eq=False)
class Dataset:
    """n users with m items each, stored as stacked arrays.

    Pairwise: ``features`` (n, m, d), ``labels`` (n, m) in {0, 1}.
    K-wise: ``features`` (n, m, K, d), ``labels`` (n, m, K) rankings.
    """

    features: FloatArray
    labels: IntArray
    config: GenConfig

    def __post_init__(self) -> None:
        n, m = self.features.shape[:2]
        if (n, m) != (self.config.n, self.config.m):
            raise InvalidConfig("features", f"shape {self.features.shape} != (n, m)")
        if self.features.shape[-1] != self.config.d:
            raise DimensionMismatch(self.config.d, self.features.shape[-1])
        if self.features.ndim == 4:
            K = self.features.shape[2]
            if self.labels.shape != (n, m, K):
                raise InvalidConfig("labels", f"expected shape {(n, m, K)}")
            ranked = np.sort(self.labels, axis=-1)
            if not (ranked == np.arange(K)).all():
                raise InvalidConfig("labels", "every ranking must permute range(K)")
        else:
            if self.labels.shape != (n, m):
                raise InvalidConfig("labels", f"expected shape {(n, m)}")
            if not np.isin(self.labels, (0, 1)).all():
                raise InvalidConfig("labels", "pairwise labels must be 0 or 1")

    @property
    def kind(self) -> DataKind:
        return DataKind.KWISE if self.features.ndim == 4 else DataKind.PAIRWISE

    @property
    def n_users(self) -> int:
        return self.config.n

    @property
    def m(self) -> int:
        return self.config.m

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def model(self) -> ModelConfig:
        return self.config.model

    @property
    def users(self) -> list[UserRecord]:
        return [
            UserRecord(self.features[i], self.labels[i]) for i in range(self.n_users)
        ]

    def average_gradients(self, theta: ParamVector, indices: IntArray) -> FloatArray:
        """Per-user averaged gradients for the selected users, shape (len, d)."""
        return batch_user_grads(theta, self.features[indices], self.labels[indices])

    def subset(self, indices: IntArray) -> "Dataset":
        return Dataset(
            features=self.features[indices],
            labels=self.labels[indices],
            config=replace(self.config, n=len(indices)),
        )

    def with_labels(self, labels: IntArray) -> "Dataset":
        return Dataset(features=self.features, labels=labels, config=self.config)


def _unit_sphere(rng: np.random.Generator, shape: tuple[int, ...]) -> FloatArray:
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def sample_theta_star(config: GenConfig, rng: np.random.Generator) -> TrueModel:
    """theta* uniform on the radius-B sphere of the mean-zero subspace."""
    v = rng.standard_normal(config.d)
    v = v - v.mean()
    theta = project(v * (config.B / np.linalg.norm(v)), config.B)
    return TrueModel(theta_star=theta, config=config.model)


def sample_feature(config: GenConfig, rng: np.random.Generator) -> FloatArray:
    # Uniform on the radius-L sphere: covariance (L^2 / d) I.
    return config.L * _unit_sphere(rng, (config.d,))


def sample_label(
    theta_star: ParamVector, x: FloatArray, rng: np.random.Generator
) -> int:
    if x.shape[-1] != theta_star.shape[0]:
        raise DimensionMismatch(theta_star.shape[0], x.shape[-1], "feature")
    return int(rng.random() < expit(x @ theta_star))


def generate(config: GenConfig) -> tuple[Dataset, TrueModel]:
    """Pairwise dataset: n users x m items, features on the radius-L sphere."""
    rng = make_rng(config.seed)
    truth = sample_theta_star(config, rng)
    features = config.L * _unit_sphere(rng, (config.n, config.m, config.d))
    probs = expit(features @ truth.theta_star)
    labels = (rng.random((config.n, config.m)) < probs).astype(np.int64)
    logger.info(
        "Generated pairwise dataset n=%d m=%d d=%d seed=%d",
        config.n,
        config.m,
        config.d,
        config.seed,
    )
    return Dataset(features=features, labels=labels, config=config), truth


def generate_kwise(config: GenConfig) -> tuple[Dataset, TrueModel]:
    """K-wise dataset with full rankings drawn from the Plackett-Luce model.

    Candidate features lie on the radius-L/2 sphere so any pairwise
    difference has norm at most L. Rankings use the Gumbel-max form of
    sequential choice without replacement: sorting rewards perturbed by
    i.i.d. Gumbel noise yields exactly the PL ranking distribution.
    """
    if config.K < 2:
        raise InvalidConfig("K", "must be at least 2")
    rng = make_rng(config.seed)
    truth = sample_theta_star(config, rng)
    shape = (config.n, config.m, config.K)
    features = 0.5 * config.L * _unit_sphere(rng, (*shape, config.d))
    keys = features @ truth.theta_star + rng.gumbel(size=shape)
    rankings = np.argsort(-keys, axis=-1, kind="stable").astype(np.int64)
    logger.info(
        "Generated %d-wise dataset n=%d m=%d d=%d seed=%d",
        config.K,
        config.n,
        config.m,
        config.d,
        config.seed,
    )
    return Dataset(features=features, labels=rankings, config=config), truth


def coverage_check(dataset: Dataset) -> float:
    """Smallest eigenvalue of the sample covariance of differential features.

    K-wise records contribute every pairwise difference of their candidates.
    """
    if dataset.kind is DataKind.KWISE:
        pairs = list(combinations(range(dataset.config.K), 2))
        feats = dataset.features
        diffs = [feats[..., a, :] - feats[..., b, :] for a, b in pairs]
        x = np.stack(diffs, axis=-2).reshape(-1, dataset.config.d)
    else:
        x = dataset.features.reshape(-1, dataset.config.d)
    if x.shape[0] < dataset.config.d:
        raise InsufficientSamples(x.shape[0], dataset.config.d)
    cov = np.einsum("ni,nj->ij", x, x) / x.shape[0]
    return float(np.linalg.eigvalsh(cov)[0])

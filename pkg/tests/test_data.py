"""Tests for synthetic data generation."""

import itertools

import numpy as np
import pytest
from scipy import stats

from upldp.core.data import (
    Dataset,
    GenConfig,
    TrueModel,
    coverage_check,
    generate,
    generate_kwise,
    sample_feature,
    sample_label,
    sample_theta_star,
)
from upldp.core.model import user_avg_grad
from upldp.exceptions import DimensionMismatch, InsufficientSamples, InvalidConfig
from upldp.internal.rng import make_rng
from upldp.types import DataKind


class TestGenConfig:
    def test_model_view(self) -> None:
        config = GenConfig(n=4, m=2, d=3, B=2.0, L=0.5, K=3)
        model = config.model
        assert (model.d, model.B, model.L, model.K) == (3, 2.0, 0.5, 3)

    @pytest.mark.parametrize(
        "kwargs",
        [{"n": 0}, {"m": 0}, {"d": 1}, {"seed": -1}, {"B": 0.0}],
    )
    def test_rejects_invalid(self, kwargs: dict[str, float]) -> None:
        base: dict[str, float] = {"n": 4, "m": 2, "d": 3}
        with pytest.raises(InvalidConfig):
            _ = GenConfig(**(base | kwargs))  # pyright: ignore[reportArgumentType]


class TestGenerate:
    def test_same_seed_same_data(self) -> None:
        """Test generation is a pure function of the config."""
        config = GenConfig(n=10, m=3, d=4, seed=99)
        (a, ta), (b, tb) = generate(config), generate(config)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(ta.theta_star, tb.theta_star)

    def test_different_seeds_differ(self) -> None:
        a, _ = generate(GenConfig(n=10, m=3, d=4, seed=1))
        b, _ = generate(GenConfig(n=10, m=3, d=4, seed=2))
        assert not np.array_equal(a.features, b.features)

    def test_theta_star_on_sphere_of_subspace(self) -> None:
        for seed in range(20):
            _, truth = generate(GenConfig(n=2, m=1, d=5, B=2.5, seed=seed))
            assert np.linalg.norm(truth.theta_star) == pytest.approx(2.5, abs=1e-9)
            assert abs(truth.theta_star.sum()) <= 1e-9 * 5

    def test_shapes_and_norms(
        self, pairwise_data: tuple[Dataset, TrueModel]
    ) -> None:
        dataset, _ = pairwise_data
        assert dataset.kind is DataKind.PAIRWISE
        assert dataset.features.shape == (40, 4, 3)
        assert dataset.labels.shape == (40, 4)
        assert set(np.unique(dataset.labels)) <= {0, 1}
        np.testing.assert_allclose(np.linalg.norm(dataset.features, axis=-1), 1.0)

    def test_label_frequency_follows_model(self) -> None:
        """Test labels are Bernoulli(sigmoid(<x, theta*>))."""
        rng = make_rng(5)
        theta = np.array([1.0, -1.0])
        x = np.array([0.5, -0.5])
        draws = [sample_label(theta, x, rng) for _ in range(20_000)]
        p = 1 / (1 + np.exp(-1.0))
        assert np.mean(draws) == pytest.approx(p, abs=4 * np.sqrt(p * (1 - p) / 20_000))

    def test_single_samplers(self) -> None:
        config = GenConfig(n=1, m=1, d=6, B=3.0, L=0.4)
        rng = make_rng(0)
        truth = sample_theta_star(config, rng)
        assert np.linalg.norm(truth.theta_star) == pytest.approx(3.0)
        assert np.linalg.norm(sample_feature(config, rng)) == pytest.approx(0.4)
        with pytest.raises(DimensionMismatch):
            _ = sample_label(truth.theta_star, np.zeros(2), rng)


class TestGenerateKwise:
    def test_shapes_and_rankings(self, kwise_data: tuple[Dataset, TrueModel]) -> None:
        dataset, _ = kwise_data
        assert dataset.kind is DataKind.KWISE
        assert dataset.features.shape == (30, 3, 4, 3)
        assert dataset.labels.shape == (30, 3, 4)
        np.testing.assert_array_equal(
            np.sort(dataset.labels, axis=-1), np.broadcast_to(np.arange(4), (30, 3, 4))
        )
        # Candidate features on the L/2 sphere keep differences within L.
        np.testing.assert_allclose(np.linalg.norm(dataset.features, axis=-1), 0.5)

    def test_uniform_rankings_without_signal(self) -> None:
        """Test the PL sampler is uniform over S_3 when rewards vanish."""
        dataset, _ = generate_kwise(
            GenConfig(n=100_000, m=1, d=2, B=1e-12, K=3, seed=3)
        )
        perms = list(itertools.permutations(range(3)))
        index = {p: i for i, p in enumerate(perms)}
        counts = np.zeros(len(perms))
        for ranking in dataset.labels[:, 0, :]:
            counts[index[tuple(int(v) for v in ranking)]] += 1
        assert stats.chisquare(counts).pvalue > 0.001

    def test_top_choice_follows_softmax(self) -> None:
        dataset, truth = generate_kwise(
            GenConfig(n=20_000, m=1, d=3, B=4.0, L=2.0, K=3, seed=8)
        )
        rewards = dataset.features[:, 0] @ truth.theta_star
        probs = np.exp(rewards) / np.exp(rewards).sum(axis=-1, keepdims=True)
        top = dataset.labels[:, 0, 0]
        expected = probs[np.arange(20_000), top].mean()
        # Mean probability of the chosen winner exceeds the uniform 1/3.
        assert expected > 1 / 3 + 0.05


class TestDataset:
    def test_users_and_average_gradients(
        self, pairwise_data: tuple[Dataset, TrueModel]
    ) -> None:
        dataset, truth = pairwise_data
        users = dataset.users
        assert len(users) == 40
        indices = np.array([0, 5, 39])
        grads = dataset.average_gradients(truth.theta_star, indices)
        for row, i in zip(grads, indices):
            np.testing.assert_allclose(
                row, user_avg_grad(truth.theta_star, users[i]), atol=1e-15
            )

    def test_subset_and_relabel(self, pairwise_data: tuple[Dataset, TrueModel]) -> None:
        dataset, _ = pairwise_data
        sub = dataset.subset(np.arange(10))
        assert sub.n_users == 10
        assert sub.m == dataset.m
        flipped = dataset.with_labels(1 - dataset.labels)
        np.testing.assert_array_equal(flipped.features, dataset.features)
        np.testing.assert_array_equal(flipped.labels, 1 - dataset.labels)

    def test_rejects_shape_mismatch(self) -> None:
        config = GenConfig(n=2, m=2, d=3)
        with pytest.raises(InvalidConfig):
            _ = Dataset(np.zeros((3, 2, 3)), np.zeros((3, 2), np.int64), config)
        with pytest.raises(DimensionMismatch):
            _ = Dataset(np.zeros((2, 2, 4)), np.zeros((2, 2), np.int64), config)

    def test_rejects_non_binary_labels(self) -> None:
        config = GenConfig(n=2, m=2, d=3)
        labels = np.array([[0, 1], [7, 0]])
        with pytest.raises(InvalidConfig):
            _ = Dataset(np.zeros((2, 2, 3)), labels, config)

    def test_rejects_invalid_rankings(
        self, kwise_data: tuple[Dataset, TrueModel]
    ) -> None:
        dataset, _ = kwise_data
        labels = dataset.labels.copy()
        labels[0, 0] = [0, 0, 1, 2]
        with pytest.raises(InvalidConfig):
            _ = dataset.with_labels(labels)
        with pytest.raises(InvalidConfig):
            _ = dataset.with_labels(labels[..., :3])


class TestCoverage:
    def test_sphere_coverage_near_l2_over_d(self) -> None:
        dataset, _ = generate(GenConfig(n=500, m=4, d=5, L=1.0, seed=2))
        assert coverage_check(dataset) == pytest.approx(0.2, abs=0.05)

    def test_kwise_uses_pairwise_differences(
        self, kwise_data: tuple[Dataset, TrueModel]
    ) -> None:
        dataset, _ = kwise_data
        assert coverage_check(dataset) > 0

    def test_too_few_samples(self) -> None:
        dataset, _ = generate(GenConfig(n=1, m=2, d=5))
        with pytest.raises(InsufficientSamples):
            _ = coverage_check(dataset)

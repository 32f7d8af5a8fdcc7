"""Noise samplers, AboveThreshold and user-level randomized response.

All samplers draw from an explicit ``numpy.random.Generator``; a generator
must not be shared between threads.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from upldp.exceptions import InvalidConfig, ThresholdHalted
from upldp.types import Answer, FloatArray, IntArray

__all__ = (
    "ThresholdState",
    "above_threshold_init",
    "above_threshold_query",
    "gaussian_vector",
    "keep_probability",
    "laplace_sample",
    "rr_flip",
    "rr_flip_labels",
)

logger = logging.getLogger(__name__)


def laplace_sample(scale: float, rng: np.random.Generator) -> float:
    if not scale > 0:
        raise InvalidConfig("scale", "must be positive")
    return float(rng.laplace(0.0, scale))


def gaussian_vector(std: float, d: int, rng: np.random.Generator) -> FloatArray:
    if not std > 0:
        raise InvalidConfig("std", "must be positive")
    return rng.normal(0.0, std, size=d)


@dataclass(slots=True)
class ThresholdState:
    """Running state of one AboveThreshold instance."""

    noisy_threshold: float
    epsilon: float
    halted: bool = False
    queries: int = 0


def above_threshold_init(
    threshold: float, epsilon: float, rng: np.random.Generator
) -> ThresholdState:
    if not epsilon > 0:
        raise InvalidConfig("epsilon", "must be positive")
    noisy = threshold - laplace_sample(2.0 / epsilon, rng)
    return ThresholdState(noisy_threshold=noisy, epsilon=epsilon)


def above_threshold_query(
    state: ThresholdState, q_value: float, rng: np.random.Generator
) -> Answer:
    """Compare a noisy query against the noisy threshold; BELOW halts for good."""
    if state.halted:
        raise ThresholdHalted()
    state.queries += 1
    noisy_q = q_value + laplace_sample(4.0 / state.epsilon, rng)
    if noisy_q < state.noisy_threshold:
        state.halted = True
        logger.debug("AboveThreshold halted after %d queries", state.queries)
        return Answer.BELOW
    return Answer.ABOVE


def keep_probability(epsilon: float, m: int) -> float:
    """Probability that user-level randomized response keeps a label."""
    if epsilon < 0:
        raise InvalidConfig("epsilon", "must be non-negative")
    if m < 1:
        raise InvalidConfig("m", "must be at least 1")
    return float(expit(epsilon / m))


def rr_flip(y: int, epsilon: float, m: int, rng: np.random.Generator) -> int:
    """Keep y with probability sigmoid(epsilon / m), otherwise flip it."""
    keep = rng.random() < keep_probability(epsilon, m)
    return y if keep else 1 - y


def rr_flip_labels(
    labels: IntArray, epsilon: float, m: int, rng: np.random.Generator
) -> IntArray:
    """Vectorised ``rr_flip`` over a whole label array, one coin per label."""
    keep = rng.random(labels.shape) < keep_probability(epsilon, m)
    return np.where(keep, labels, 1 - labels).astype(np.int64)

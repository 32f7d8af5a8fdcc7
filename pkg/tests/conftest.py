"""Shared fixtures."""

from collections.abc import Iterator

import numpy as np
import pytest

from upldp.core.data import Dataset, GenConfig, TrueModel, generate, generate_kwise
from upldp.internal.globals import set_thread_count
from upldp.internal.rng import make_rng


@pytest.fixture(autouse=True)
def reset_thread_count() -> Iterator[None]:
    yield
    set_thread_count(None)


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(1234)


@pytest.fixture
def pairwise_data() -> tuple[Dataset, TrueModel]:
    return generate(GenConfig(n=40, m=4, d=3, seed=7))


@pytest.fixture
def kwise_data() -> tuple[Dataset, TrueModel]:
    return generate_kwise(GenConfig(n=30, m=3, d=3, K=4, seed=11))

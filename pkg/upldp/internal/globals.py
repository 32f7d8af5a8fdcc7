"""Process-wide settings: the estimator registry and the worker-thread cap."""

import os
from collections.abc import Callable
from typing import TYPE_CHECKING

from upldp.exceptions import InvalidConfig, NoEstimatorFound

if TYPE_CHECKING:
    from upldp.core.estimators import FitResult

__all__ = (
    "EstimatorFn",
    "get_estimator",
    "get_thread_count",
    "known_estimators",
    "register_estimator",
    "set_thread_count",
)

THREADS_ENV = "UPLDP_THREADS"

type EstimatorFn = Callable[..., "FitResult"]

_estimators: dict[str, EstimatorFn] = {}
_thread_count: int | None = None


def register_estimator(name: str, fn: EstimatorFn) -> None:
    _estimators[name] = fn


def get_estimator(name: str) -> EstimatorFn:
    fn = _estimators.get(name)
    if fn is None:
        raise NoEstimatorFound(name, known_estimators())
    return fn


def known_estimators() -> tuple[str, ...]:
    return tuple(sorted(_estimators))


def get_thread_count() -> int:
    """Explicit override, else UPLDP_THREADS, else the machine core count."""
    if _thread_count is not None:
        return _thread_count
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise InvalidConfig(THREADS_ENV, f"expected an integer, got {raw!r}") from None
    if value < 1:
        raise InvalidConfig(THREADS_ENV, "must be at least 1")
    return value


def set_thread_count(count: int | None) -> None:
    global _thread_count
    if count is not None and count < 1:
        raise InvalidConfig("threads", "must be at least 1")
    _thread_count = count

"""Shared enums and array aliases."""

from enum import Enum, StrEnum, auto

import numpy as np
import numpy.typing as npt

__all__ = (
    "Answer",
    "DataKind",
    "EstimatorName",
    "FloatArray",
    "IntArray",
    "ParamVector",
)

type FloatArray = npt.NDArray[np.float64]
type IntArray = npt.NDArray[np.int64]

# A point of Theta_B once it has gone through `project`.
type ParamVector = npt.NDArray[np.float64]


class Answer(Enum):
    """AboveThreshold output: ABOVE is the top symbol, BELOW the bottom one."""

    ABOVE = auto()
    BELOW = auto()


class DataKind(StrEnum):
    PAIRWISE = "pairwise"
    KWISE = "kwise"


class EstimatorName(StrEnum):
    MLE = "mle"
    RR = "rr"
    USERWISE = "userwise"
    GROUP = "group"
    AUP = "aup"

__all__ = (
    "CodecError",
    "DimensionMismatch",
    "DivergenceError",
    "EmptyUserRecord",
    "InsufficientSamples",
    "InvalidConfig",
    "InvalidPermutation",
    "NoEstimatorFound",
    "PartitionError",
    "ThresholdHalted",
    "UnsupportedDataset",
    "UpldpError",
)


class UpldpError(Exception):
    pass


class InvalidConfig(ValueError, UpldpError):
    field: str

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"Invalid value for '{field}': {message}")
        self.field = field


class DimensionMismatch(ValueError, UpldpError):
    expected: int
    actual: int

    def __init__(self, expected: int, actual: int, what: str = "vector") -> None:
        super().__init__(
            f"Dimension mismatch for {what}: expected {expected}, got {actual}."
        )
        self.expected = expected
        self.actual = actual


class EmptyUserRecord(ValueError, UpldpError):
    def __init__(self) -> None:
        super().__init__("User record has no items.")


class InsufficientSamples(ValueError, UpldpError):
    def __init__(self, samples: int, required: int) -> None:
        super().__init__(
            f"Need at least {required} feature vectors, dataset has {samples}."
        )


class InvalidPermutation(ValueError, UpldpError):
    def __init__(self, permutation: object) -> None:
        super().__init__(f"Not a permutation of range(K): {permutation!r}")


class ThresholdHalted(RuntimeError, UpldpError):
    def __init__(self) -> None:
        super().__init__("AboveThreshold has halted and rejects further queries.")


class DivergenceError(ArithmeticError, UpldpError):
    iteration: int
    loss: float

    def __init__(self, iteration: int, loss: float, initial: float) -> None:
        super().__init__(
            f"Loss diverged at iteration {iteration}: {loss:.6g} "
            + f"exceeds 1e3 x initial loss {initial:.6g}."
        )
        self.iteration = iteration
        self.loss = loss


class NoEstimatorFound(LookupError, UpldpError):
    name: str

    def __init__(self, name: str, known: tuple[str, ...]) -> None:
        super().__init__(
            f"No estimator named '{name}'. Known estimators: {', '.join(known)}."
        )
        self.name = name


class UnsupportedDataset(TypeError, UpldpError):
    def __init__(self, estimator: str, kind: str) -> None:
        super().__init__(f"Estimator '{estimator}' does not support {kind} data.")


class PartitionError(ValueError, UpldpError):
    def __init__(self, n: int, k: int) -> None:
        super().__init__(
            f"Cannot split {n} users into {k} stages: need n >= 2**k = {2**k}."
        )


class CodecError(ValueError, UpldpError):
    def __init__(self, message: str) -> None:
        super().__init__(f"Malformed document: {message}")

"""Experiment grids, effective-noise reports and reference bound curves."""

import logging
import math
import time
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from itertools import product
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from upldp.api.estimator import AUP_OVERRIDE_KEYS, fit
from upldp.core.accountant import PrivacyBudget
from upldp.core.data import GenConfig, generate, generate_kwise
from upldp.core.estimators import FitConfig
from upldp.core.model import ModelConfig
from upldp.exceptions import InvalidConfig, UpldpError
from upldp.internal.globals import get_thread_count
from upldp.internal.rng import derive_seed
from upldp.types import EstimatorName

__all__ = (
    "CSV_COLUMNS",
    "ExperimentSpec",
    "ResultRow",
    "TheoryBounds",
    "effective_noise_report",
    "read_results",
    "run_experiment",
    "theory_curves",
    "write_results",
)

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "estimator",
    "n",
    "m",
    "d",
    "epsilon",
    "delta",
    "rep",
    "error_l2",
    "effective_noise_std",
    "iterations_done",
    "halted_early",
    "wall_seconds",
    "seed",
)

_FIT_FIELDS = frozenset(f.name for f in fields(FitConfig))


@dataclass(frozen=True, slots=True)
class ExperimentSpec:
    """A grid of (n, m, d, epsilon) cells, each fitted ``reps`` times."""

    n: tuple[int, ...]
    m: tuple[int, ...]
    d: tuple[int, ...]
    epsilon: tuple[float, ...]
    delta: float = 1e-5
    estimators: tuple[str, ...] = ("mle",)
    reps: int = 1
    master_seed: int = 0
    B: float = 1.0
    L: float = 1.0
    K: int = 2
    timing: bool = False
    overrides: Mapping[str, Mapping[str, float | int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("n", "m", "d", "epsilon"):
            if not getattr(self, name):
                raise InvalidConfig(name, "grid must not be empty")
        if self.reps < 1:
            raise InvalidConfig("reps", "must be at least 1")
        known = {e.value for e in EstimatorName}
        for est in self.estimators:
            if est not in known:
                raise InvalidConfig("estimators", f"unknown estimator {est!r}")
        if not self.estimators:
            raise InvalidConfig("estimators", "must not be empty")
        _ = PrivacyBudget(min(self.epsilon), self.delta)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ExperimentSpec":
        if not isinstance(raw, Mapping):
            raise InvalidConfig("spec", "must be a JSON object")
        grid = raw.get("grid", raw)
        try:
            return cls(
                n=tuple(int(v) for v in grid["n"]),
                m=tuple(int(v) for v in grid["m"]),
                d=tuple(int(v) for v in grid["d"]),
                epsilon=tuple(float(v) for v in grid["epsilon"]),
                delta=float(raw.get("delta", 1e-5)),
                estimators=tuple(str(e) for e in raw.get("estimators", ("mle",))),
                reps=int(raw.get("reps", 1)),
                master_seed=int(raw.get("master_seed", 0)),
                B=float(raw.get("B", 1.0)),
                L=float(raw.get("L", 1.0)),
                K=int(raw.get("K", 2)),
                timing=bool(raw.get("timing", False)),
                overrides={
                    str(k): dict(v) for k, v in raw.get("overrides", {}).items()
                },
            )
        except InvalidConfig:
            raise
        except KeyError as e:
            raise InvalidConfig(str(e.args[0]), "missing from experiment spec") from e
        except (AttributeError, TypeError, ValueError) as e:
            raise InvalidConfig("spec", str(e)) from e

    def cells(self) -> list[tuple[int, int, int, float]]:
        return list(product(self.n, self.m, self.d, self.epsilon))


@dataclass(frozen=True, slots=True)
class ResultRow:
    estimator: str
    n: int
    m: int
    d: int
    epsilon: float
    delta: float
    rep: int
    error_l2: float
    effective_noise_std: float
    iterations_done: int
    halted_early: bool
    wall_seconds: float
    seed: int
    failure: str | None = None

    def to_record(self) -> dict[str, object]:
        record = asdict(self)
        del record["failure"]
        return record


@dataclass(frozen=True, slots=True)
class TheoryBounds:
    """Reference curves with every hidden constant set to 1 (not fitted)."""

    n: int
    m: int
    d: int
    epsilon: float
    gamma: float
    kappa: float
    rr_bound: float
    aup_bound: float
    lower_bound: float


def _split_overrides(
    name: str, raw: Mapping[str, float | int], base: FitConfig
) -> tuple[FitConfig, dict[str, float | int]]:
    fit_kwargs: dict[str, Any] = {}
    extra: dict[str, float | int] = {}
    for key, value in raw.items():
        if name == EstimatorName.AUP and key in AUP_OVERRIDE_KEYS:
            extra[key] = value
        elif key in _FIT_FIELDS:
            fit_kwargs[key] = value
        else:
            raise InvalidConfig(key, f"not a setting of estimator '{name}'")
    return replace(base, **fit_kwargs), extra


def _run_cell(
    spec: ExperimentSpec, cell_index: int, cell: tuple[int, int, int, float], rep: int
) -> list[ResultRow]:
    n, m, d, eps = cell
    seed = derive_seed(spec.master_seed, cell_index, rep)

    def failed(name: str, error: UpldpError) -> ResultRow:
        logger.warning("Cell %s rep %d failed for %s: %s", cell, rep, name, error)
        return ResultRow(
            estimator=name,
            n=n,
            m=m,
            d=d,
            epsilon=eps,
            delta=spec.delta,
            rep=rep,
            error_l2=math.nan,
            effective_noise_std=math.nan,
            iterations_done=0,
            halted_early=False,
            wall_seconds=0.0,
            seed=seed,
            failure=str(error),
        )

    try:
        gen = GenConfig(n=n, m=m, d=d, B=spec.B, L=spec.L, K=spec.K, seed=seed)
        dataset, truth = generate_kwise(gen) if spec.K > 2 else generate(gen)
        budget = PrivacyBudget(eps, spec.delta)
    except UpldpError as e:
        return [failed(name, e) for name in spec.estimators]

    rows: list[ResultRow] = []
    for est_index, name in enumerate(spec.estimators):
        base = FitConfig(seed=derive_seed(seed, est_index))
        started = time.perf_counter()
        try:
            config, extra = _split_overrides(
                name, spec.overrides.get(name, {}), base
            )
            result = fit(name, dataset, budget, config, extra)
        except UpldpError as e:
            rows.append(failed(name, e))
            continue
        elapsed = time.perf_counter() - started if spec.timing else 0.0
        rows.append(
            ResultRow(
                estimator=name,
                n=n,
                m=m,
                d=d,
                epsilon=eps,
                delta=spec.delta,
                rep=rep,
                error_l2=float(np.linalg.norm(result.theta_hat - truth.theta_star)),
                effective_noise_std=result.effective_noise_std,
                iterations_done=result.iterations_done,
                halted_early=result.halted_early,
                wall_seconds=elapsed,
                seed=seed,
            )
        )
    logger.info("Finished cell %s rep %d", cell, rep)
    return rows


def run_experiment(spec: ExperimentSpec) -> list[ResultRow]:
    """Every (cell, rep) is independent; rows come back in (cell, rep) order."""
    tasks = [
        (index, cell, rep)
        for index, cell in enumerate(spec.cells())
        for rep in range(spec.reps)
    ]
    workers = max(1, min(get_thread_count(), len(tasks)))
    logger.info("Running %d tasks on %d threads", len(tasks), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        chunks = pool.map(lambda task: _run_cell(spec, *task), tasks)
        return [row for chunk in chunks for row in chunk]


def write_results(rows: Iterable[ResultRow], path: Path) -> None:
    frame = pd.DataFrame([row.to_record() for row in rows], columns=list(CSV_COLUMNS))
    frame.to_csv(path, index=False, lineterminator="\n")


def read_results(path: Path) -> list[ResultRow]:
    frame = pd.read_csv(path)
    missing = set(CSV_COLUMNS) - set(frame.columns)
    if missing:
        raise InvalidConfig("results", f"missing columns {sorted(missing)}")
    return [
        ResultRow(
            estimator=str(r["estimator"]),
            n=int(r["n"]),
            m=int(r["m"]),
            d=int(r["d"]),
            epsilon=float(r["epsilon"]),
            delta=float(r["delta"]),
            rep=int(r["rep"]),
            error_l2=float(r["error_l2"]),
            effective_noise_std=float(r["effective_noise_std"]),
            iterations_done=int(r["iterations_done"]),
            halted_early=bool(r["halted_early"]),
            wall_seconds=float(r["wall_seconds"]),
            seed=int(r["seed"]),
        )
        for r in frame.to_dict("records")
    ]


def effective_noise_report(rows: Sequence[ResultRow]) -> pd.DataFrame:
    """Mean effective noise per estimator, rows epsilon, columns m."""
    private = [
        row.to_record()
        for row in rows
        if row.estimator != EstimatorName.MLE and row.failure is None
    ]
    if not private:
        raise InvalidConfig("rows", "no differentially private results to report")
    frame = pd.DataFrame(private)
    return frame.pivot_table(
        index=["estimator", "epsilon"],
        columns="m",
        values="effective_noise_std",
        aggfunc="mean",
    )


def _rr_factor(epsilon: float, m: int) -> float:
    # (e^{eps/m} + 1) / (e^{eps/m} - 1)
    return 1.0 / math.tanh(epsilon / (2.0 * m))


def theory_curves(
    config: ModelConfig,
    grid: Iterable[tuple[int, int, float]],
    *,
    alpha: float = 0.05,
) -> list[TheoryBounds]:
    """Evaluate the upper and lower rate expressions per (n, m, epsilon)."""
    if not 0 < alpha < 1:
        raise InvalidConfig("alpha", "must lie in (0, 1)")
    d, B, L = config.d, config.B, config.L
    gamma = 1.0 / (2.0 + math.exp(-2 * L * B) + math.exp(2 * L * B))
    kappa = L * L / d
    bounds: list[TheoryBounds] = []
    for n, m, eps in grid:
        if n < 1 or m < 1:
            raise InvalidConfig("grid", f"n and m must be positive, got {(n, m)}")
        if not eps > 0:
            raise InvalidConfig("epsilon", f"must be positive, got {eps}")
        nm = n * m
        private_term = math.sqrt(d) / (math.sqrt(m) * n * eps)
        bounds.append(
            TheoryBounds(
                n=n,
                m=m,
                d=d,
                epsilon=eps,
                gamma=gamma,
                kappa=kappa,
                rr_bound=_rr_factor(eps, m)
                / (gamma * kappa)
                * math.sqrt((1 + math.log(1 / alpha)) / nm),
                aup_bound=1 / math.sqrt(nm) + private_term,
                lower_bound=d / math.sqrt(nm) + private_term,
            )
        )
    return bounds

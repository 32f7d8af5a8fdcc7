"""JSON documents for datasets, fit results and noise plans."""

import json
from collections.abc import Mapping
from typing import Any

import numpy as np

from upldp.core.data import Dataset, GenConfig, TrueModel
from upldp.core.estimators import FitResult
from upldp.exceptions import CodecError
from upldp.types import DataKind

__all__ = (
    "DATASET_VERSION",
    "decode_dataset",
    "encode_dataset",
    "encode_fit_result",
    "fit_result_to_dict",
)

DATASET_VERSION = "upldp-1"


def _dumps(doc: Mapping[str, object]) -> str:
    return json.dumps(doc, separators=(",", ":"), allow_nan=True) + "\n"


def encode_dataset(dataset: Dataset, truth: TrueModel | None = None) -> str:
    """Serialise to the versioned dataset schema; byte-stable for equal input."""
    cfg = dataset.config
    users: list[dict[str, object]] = []
    for i in range(dataset.n_users):
        if dataset.kind is DataKind.KWISE:
            items = [
                {"features": feats.tolist(), "perm": perm.tolist()}
                for feats, perm in zip(dataset.features[i], dataset.labels[i])
            ]
        else:
            items = [
                {"x": x.tolist(), "y": int(y)}
                for x, y in zip(dataset.features[i], dataset.labels[i])
            ]
        users.append({"items": items})
    doc = {
        "version": DATASET_VERSION,
        "config": {
            "n": cfg.n,
            "m": cfg.m,
            "d": cfg.d,
            "B": cfg.B,
            "L": cfg.L,
            "K": cfg.K,
            "seed": cfg.seed,
        },
        "theta_star": None if truth is None else truth.theta_star.tolist(),
        "users": users,
    }
    return _dumps(doc)


def decode_dataset(text: str) -> tuple[Dataset, TrueModel | None]:
    try:
        doc: dict[str, Any] = json.loads(text)
    except json.JSONDecodeError as e:
        raise CodecError(str(e)) from e
    if not isinstance(doc, dict):
        raise CodecError("top level must be an object")
    if doc.get("version") != DATASET_VERSION:
        raise CodecError(f"unsupported version {doc.get('version')!r}")
    try:
        raw = doc["config"]
        config = GenConfig(
            n=int(raw["n"]),
            m=int(raw["m"]),
            d=int(raw["d"]),
            B=float(raw["B"]),
            L=float(raw["L"]),
            K=int(raw.get("K", 2)),
            seed=int(raw["seed"]),
        )
        items = [user["items"] for user in doc["users"]]
        if items and items[0] and "perm" in items[0][0]:
            features = np.array(
                [[it["features"] for it in row] for row in items], dtype=np.float64
            )
            labels = np.array(
                [[it["perm"] for it in row] for row in items], dtype=np.int64
            )
        else:
            features = np.array(
                [[it["x"] for it in row] for row in items], dtype=np.float64
            )
            labels = np.array(
                [[it["y"] for it in row] for row in items], dtype=np.int64
            )
    except (KeyError, TypeError, ValueError) as e:
        raise CodecError(f"missing or invalid field: {e}") from e
    try:
        dataset = Dataset(features=features, labels=labels, config=config)
    except ValueError as e:
        raise CodecError(str(e)) from e
    theta_star = doc.get("theta_star")
    if theta_star is None:
        return dataset, None
    try:
        theta = np.array(theta_star, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise CodecError(f"invalid theta_star: {e}") from e
    if theta.shape != (config.d,):
        raise CodecError(f"theta_star must have length {config.d}")
    return dataset, TrueModel(theta, config.model)


def fit_result_to_dict(result: FitResult) -> dict[str, object]:
    spent = result.privacy_spent
    return {
        "estimator": result.estimator,
        "theta_hat": result.theta_hat.tolist(),
        "iterations_done": result.iterations_done,
        "halted_early": result.halted_early,
        "effective_noise_std": result.effective_noise_std,
        "loss_trajectory": list(result.loss_trajectory),
        "theta_last": result.theta_last.tolist(),
        "privacy_spent": (
            None if spent is None else {"epsilon": spent.epsilon, "delta": spent.delta}
        ),
        "stages": [
            {
                "n_users": s.n_users,
                "T": s.T,
                "tau": s.tau,
                "eta": s.eta,
                "halted_early": s.halted_early,
                "iterations_done": s.iterations_done,
                "effective_noise_std": s.effective_noise_std,
            }
            for s in result.stages
        ],
    }


def encode_fit_result(result: FitResult) -> str:
    return json.dumps(fit_result_to_dict(result), indent=2) + "\n"

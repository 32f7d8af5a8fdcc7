"""Command line entry point: ``upldp`` or ``python -m upldp``."""

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from upldp.api.estimator import fit
from upldp.api.harness import (
    ExperimentSpec,
    effective_noise_report,
    read_results,
    run_experiment,
    theory_curves,
    write_results,
)
from upldp.core.accountant import PrivacyBudget, privacy_account
from upldp.core.data import GenConfig, generate, generate_kwise
from upldp.core.estimators import FitConfig
from upldp.core.model import ModelConfig
from upldp.exceptions import InvalidConfig, UpldpError
from upldp.internal.codec import decode_dataset, encode_dataset, encode_fit_result
from upldp.internal.globals import set_thread_count
from upldp.types import EstimatorName

__all__ = ("build_parser", "main")

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _cmd_gen(args: argparse.Namespace) -> None:
    config = GenConfig(
        n=args.n, m=args.m, d=args.d, B=args.B, L=args.L, K=args.K, seed=args.seed
    )
    dataset, truth = generate_kwise(config) if config.K > 2 else generate(config)
    Path(args.out).write_text(encode_dataset(dataset, truth), encoding="utf-8")


def _cmd_fit(args: argparse.Namespace) -> None:
    dataset, _ = decode_dataset(Path(args.data).read_text(encoding="utf-8"))
    settings: dict[str, Any] = {"seed": args.seed}
    overrides: dict[str, float | int] = {}
    if args.estimator == EstimatorName.AUP:
        for key in ("batch", "clip"):
            if getattr(args, key) is not None:
                raise InvalidConfig(key, "not used by aup")
        # AUP derives T per stage; --T caps the total iteration count.
        if args.T is not None:
            overrides["t_cap"] = args.T
        for key in ("eta", "tau", "k"):
            if getattr(args, key) is not None:
                overrides[key] = getattr(args, key)
    else:
        for key, field in (
            ("T", "T"),
            ("eta", "eta"),
            ("clip", "clip"),
            ("batch", "batch_users"),
        ):
            if getattr(args, key) is not None:
                settings[field] = getattr(args, key)
    budget = (
        None
        if args.estimator == EstimatorName.MLE
        else PrivacyBudget(args.eps, args.delta)
    )
    result = fit(args.estimator, dataset, budget, FitConfig(**settings), overrides)
    Path(args.out).write_text(encode_fit_result(result), encoding="utf-8")


def _cmd_bench(args: argparse.Namespace) -> None:
    if args.threads is not None:
        set_thread_count(args.threads)
    raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    rows = run_experiment(ExperimentSpec.from_dict(raw))
    write_results(rows, Path(args.out))


def _cmd_account(args: argparse.Namespace) -> None:
    plan = privacy_account(
        PrivacyBudget(args.eps, args.delta), args.n, args.batch, args.T, tau=args.tau
    )
    print(json.dumps(plan.to_dict(), indent=2))


def _cmd_report(args: argparse.Namespace) -> None:
    rows = read_results(Path(args.results))
    if args.estimator is not None:
        rows = [row for row in rows if row.estimator == args.estimator]
    effective_noise_report(rows).to_csv(args.out, lineterminator="\n")


def _cmd_theory(args: argparse.Namespace) -> None:
    model = ModelConfig(d=args.d, B=args.B, L=args.L)
    (bounds,) = theory_curves(model, [(args.n, args.m, args.eps)], alpha=args.alpha)
    doc = {
        "note": "reference, not fit",
        "n": bounds.n,
        "m": bounds.m,
        "d": bounds.d,
        "epsilon": bounds.epsilon,
        "gamma": bounds.gamma,
        "kappa": bounds.kappa,
        "rr_bound": bounds.rr_bound,
        "aup_bound": bounds.aup_bound,
        "lower_bound": bounds.lower_bound,
    }
    print(json.dumps(doc, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="upldp",
        description="User-level label-DP reward estimation for BTL/PL preferences.",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v INFO, -vv DEBUG"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--m", type=int, required=True)
    gen.add_argument("--d", type=int, required=True)
    gen.add_argument("--B", type=float, required=True)
    gen.add_argument("--L", type=float, required=True)
    gen.add_argument("--K", type=int, default=2)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.set_defaults(handler=_cmd_gen)

    fit_cmd = sub.add_parser("fit", help="fit one estimator to a dataset")
    fit_cmd.add_argument(
        "--estimator", required=True, choices=[e.value for e in EstimatorName]
    )
    fit_cmd.add_argument("--eps", type=float, default=1.0)
    fit_cmd.add_argument("--delta", type=float, default=1e-5)
    fit_cmd.add_argument("--data", required=True)
    fit_cmd.add_argument("--out", required=True)
    fit_cmd.add_argument("--T", type=int)
    fit_cmd.add_argument("--eta", type=float)
    fit_cmd.add_argument("--clip", type=float)
    fit_cmd.add_argument("--batch", type=int)
    fit_cmd.add_argument("--seed", type=int, default=0)
    fit_cmd.add_argument("--tau", type=float, help="aup only: concentration radius")
    fit_cmd.add_argument("--k", type=int, help="aup only: number of stages")
    fit_cmd.set_defaults(handler=_cmd_fit)

    bench = sub.add_parser("bench", help="run an experiment grid to CSV")
    bench.add_argument("--spec", required=True)
    bench.add_argument("--out", required=True)
    bench.add_argument("--threads", type=int)
    bench.set_defaults(handler=_cmd_bench)

    account = sub.add_parser("account", help="print the noise plan as JSON")
    account.add_argument("--eps", type=float, required=True)
    account.add_argument("--delta", type=float, required=True)
    account.add_argument("--n", type=int, required=True)
    account.add_argument("--batch", type=int, required=True)
    account.add_argument("--T", type=int, required=True)
    account.add_argument("--tau", type=float, default=1.0)
    account.set_defaults(handler=_cmd_account)

    report = sub.add_parser("report", help="effective-noise table from bench CSV")
    report.add_argument("--results", required=True)
    report.add_argument("--estimator", choices=[e.value for e in EstimatorName])
    report.add_argument("--out", required=True)
    report.set_defaults(handler=_cmd_report)

    theory = sub.add_parser("theory", help="reference error bounds as JSON")
    theory.add_argument("--n", type=int, required=True)
    theory.add_argument("--m", type=int, required=True)
    theory.add_argument("--d", type=int, required=True)
    theory.add_argument("--eps", type=float, required=True)
    theory.add_argument("--B", type=float, default=1.0)
    theory.add_argument("--L", type=float, default=1.0)
    theory.add_argument("--alpha", type=float, default=0.05)
    theory.set_defaults(handler=_cmd_theory)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logger.debug("Running %s", args.command)

    try:
        args.handler(args)
    except UpldpError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE if isinstance(e, ValueError) else EXIT_RUNTIME
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE if isinstance(e, json.JSONDecodeError) else EXIT_RUNTIME
    finally:
        set_thread_count(None)
    return EXIT_OK

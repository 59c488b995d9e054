import argparse
import asyncio
import json
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from lib.exceptions import ConfigError, NoResults, PolylabError
from lib.json_encoder import dumps
from lib.logger import logger, setup_logger

from .active import active_learn
from .config import ActiveConfig, CanonicalPreset
from .fitter import FitResult
from .metrics import evaluate_estimate
from .oracle import make_oracle
from .presets import (
    build_problem,
    load_experiment,
    problem_from_schema,
    problem_to_schema,
    with_overrides,
)
from .report import build_report
from .runner import DATASET_FILE, FIT_FILE, TRACE_FILE, SweepRunner
from .schemas import CellCallbacks, FitSchema, ProblemSchema, read_json, write_json

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_NO_DATA = 3


def _read_overrides(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    try:
        overrides = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read overrides {path}: {e}")
    if not isinstance(overrides, dict):
        raise ConfigError(f"overrides in {path} must be a JSON object")
    return overrides


def _load_problem(path: Path):
    try:
        return problem_from_schema(read_json(path, ProblemSchema))
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read problem {path}: {e}")


def cmd_gen_voronoi(args) -> int:
    problem = build_problem("voronoi", args.dim, args.seed)
    write_json(args.out, problem_to_schema(problem))
    logger.info(
        f"Voronoi cell with {problem.truth.n_halfspaces} facets written to {args.out}"
    )
    return EXIT_OK


def cmd_gen_device(args) -> int:
    preset = CanonicalPreset()
    if args.config is not None:
        try:
            preset = CanonicalPreset.model_validate(_read_overrides(args.config))
        except ValidationError as e:
            raise ConfigError(f"invalid capacitance preset {args.config}: {e}")
    problem = build_problem("device", args.dots, args.seed, preset)
    write_json(args.out, problem_to_schema(problem))
    logger.info(
        f"{args.dots}-dot device with {problem.truth.n_halfspaces} transition facets "
        f"written to {args.out}"
    )
    return EXIT_OK


def cmd_learn(args) -> int:
    problem = _load_problem(args.problem)
    overrides = _read_overrides(args.config)
    if args.anneal_incumbent:
        overrides["fit.anneal_incumbent"] = True
    cfg = with_overrides(
        ActiveConfig.defaults(args.delta, args.baseline, seed=args.seed), overrides
    )
    oracle = make_oracle(problem)
    fit, X, trace = active_learn(oracle, problem.origin, cfg)

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    X.save(out / DATASET_FILE, oracle)
    trace.save(out / TRACE_FILE)
    write_json(out / FIT_FILE, fit.to_schema())
    logger.info(
        f"learned {fit.model.n_rows} rows from {len(X)} pairs "
        f"({trace.searches} line searches) into {out}"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    problem = _load_problem(args.problem)
    fit = FitResult.from_schema(read_json(args.fit, FitSchema))
    metrics = evaluate_estimate(problem.truth, fit.model, args.angle)
    print(dumps(metrics, indent=1))

    if args.csv is not None:
        row = pd.DataFrame([{"problem": str(args.problem), "fit": str(args.fit), **metrics}])
        row.to_csv(args.csv, mode="a", header=not args.csv.exists(), index=False)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        written = build_report(args.directory, args.out, args.bins)
    except NoResults as e:
        logger.error(str(e))
        return EXIT_NO_DATA
    for path in written:
        logger.info(f"wrote {path}")
    return EXIT_OK


def cmd_run(args) -> int:
    experiment = load_experiment(args.config)
    runner = SweepRunner(experiment, args.out, args.jobs)

    callbacks = CellCallbacks(
        on_start=lambda key: logger.info(f"cell {key.slug} started"),
        on_error=lambda outcome: logger.error(
            f"cell {outcome.key.slug} failed: {outcome.error}"
        ),
    )
    outcomes = asyncio.run(runner.execute(callbacks))

    failed = sum(not o.ok for o in outcomes)
    logger.info(f"{len(outcomes) - failed} cells done, {failed} failed")
    if outcomes and failed == len(outcomes):
        return EXIT_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polylab",
        description="Active learning of polytopes from a membership oracle.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-voronoi", help="generate a random Voronoi cell problem")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="problem JSON to write")
    p.set_defaults(handler=cmd_gen_voronoi)

    p = sub.add_parser("gen-device", help="generate a random quantum-dot device")
    p.add_argument("--dots", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, help="capacitance preset JSON")
    p.add_argument("--out", type=Path, required=True, help="problem JSON to write")
    p.set_defaults(handler=cmd_gen_device)

    p = sub.add_parser("learn", help="run active learning on one problem")
    p.add_argument("--problem", type=Path, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--baseline", action="store_true")
    p.add_argument(
        "--anneal-incumbent",
        action="store_true",
        help="perturb the best model so far instead of the first solve on restarts",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, help="JSON object of dotted overrides")
    p.add_argument("--out", type=Path, required=True, help="directory for artifacts")
    p.set_defaults(handler=cmd_learn)

    p = sub.add_parser("evaluate", help="compare a fitted model with the truth")
    p.add_argument("--problem", type=Path, required=True)
    p.add_argument("--fit", type=Path, required=True)
    p.add_argument("--angle", type=float, default=10.0)
    p.add_argument("--csv", type=Path, help="append the metrics to this CSV")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("report", help="summary tables and figures of a sweep")
    p.add_argument("directory", type=Path)
    p.add_argument("--out", type=Path, help="defaults to the sweep directory")
    p.add_argument("--bins", type=int, default=8, help="facet-measure histogram bins")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("run", help="run an experiment sweep")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(handler=cmd_run)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logger()
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"configuration error: {e}")
        return EXIT_CONFIG
    except PolylabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())

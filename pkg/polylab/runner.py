import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

import pandas as pd

from lib.exceptions import ConfigError
from lib.logger import logger, setup_logger
from lib.utils import get_time_ms

from .active import active_learn, ecdf_targets
from .config import ExperimentConfig, PolylabSettings
from .fitter import FitResult
from .geometry import HPolytope
from .metrics import evaluate_estimate, facet_table, matching_error
from .oracle import Dataset, make_oracle
from .presets import (
    build_problem,
    cell_config,
    expand_cells,
    problem_seed,
    problem_to_schema,
)
from .schemas import (
    CellCallbacks,
    CellKey,
    CellOutcome,
    EcdfRecord,
    FacetRecord,
    read_json,
    write_json,
)
from .trace import RunTrace

PROBLEM_FILE = "problem.json"
DATASET_FILE = "dataset.json"
TRACE_FILE = "trace.jsonl"
FIT_FILE = "fit.json"
RESULT_FILE = "cell_result.json"
ERROR_FILE = "cell_error.json"

RESULTS_CSV = "results.csv"
ERRORS_CSV = "errors.csv"
FACETS_CSV = "facets.csv"
ECDF_CSV = "ecdf.csv"

KEY_COLUMNS = list(CellKey.model_fields)
METRIC_COLUMNS = [
    name
    for name in CellOutcome.model_fields
    if name not in ("key", "error", "facets", "ecdf")
]


def evaluate_cell(
    key: CellKey,
    truth: HPolytope,
    fit: FitResult,
    X: Dataset,
    trace: RunTrace,
    angle_deg: float,
) -> CellOutcome:
    scalars = evaluate_estimate(truth, fit.model, angle_deg)
    table = facet_table(truth, matching_error(truth, fit.model, angle_deg))
    facets = [
        FacetRecord(
            facet=int(row.facet),
            measure=float(row.measure),
            matched=bool(row.matched),
            angle_deg=float(row.angle_deg),
        )
        for row in table.itertuples(index=False)
    ]
    ecdf: List[EcdfRecord] = ecdf_targets(trace, key.delta) if len(trace) else []
    return CellOutcome(
        key=key,
        line_searches=trace.searches,
        rounds=len(trace),
        dataset_size=len(X),
        objective=fit.objective,
        converged=fit.converged,
        facets=facets,
        ecdf=ecdf,
        **scalars,
    )


def run_cell(experiment: ExperimentConfig, key: CellKey, cell_dir: Path) -> CellOutcome:
    """
    Generate the problem of one cell, learn it, and persist every artifact.

    The result file is written last; its presence marks the cell complete.
    Failures are written to the error file and returned, never raised.
    """
    start = get_time_ms()
    cell_dir = Path(cell_dir)
    cell_dir.mkdir(parents=True, exist_ok=True)
    try:
        cfg = cell_config(experiment, key)
        problem = build_problem(
            key.kind, key.d, problem_seed(experiment, key), experiment.device_preset
        )
        write_json(cell_dir / PROBLEM_FILE, problem_to_schema(problem))

        oracle = make_oracle(problem)
        fit, X, trace = active_learn(oracle, problem.origin, cfg)
        X.save(cell_dir / DATASET_FILE, oracle)
        trace.save(cell_dir / TRACE_FILE)
        write_json(cell_dir / FIT_FILE, fit.to_schema())

        outcome = evaluate_cell(key, problem.truth, fit, X, trace, experiment.angle_deg)
        write_json(cell_dir / RESULT_FILE, outcome)
        (cell_dir / ERROR_FILE).unlink(missing_ok=True)
        logger.info(
            f"cell {key.slug} done in {get_time_ms() - start}ms: "
            f"matching error {outcome.matching_error:.3f}, "
            f"{outcome.line_searches} line searches"
        )
    except Exception as e:
        logger.error(f"cell {key.slug} failed: {e}")
        outcome = CellOutcome.from_error(e, key)
        write_json(cell_dir / ERROR_FILE, outcome)
    return outcome


class SweepRunner:
    """Runs the cells of an experiment into one artifact directory."""

    def __init__(
        self, experiment: ExperimentConfig, out_dir: Path, jobs: Optional[int] = None
    ):
        self.experiment = experiment
        self.out_dir = Path(out_dir)
        self.jobs = jobs if jobs is not None else PolylabSettings().JOBS
        if self.jobs < 1:
            raise ConfigError(f"jobs must be at least 1, got {self.jobs}")

    def cell_dir(self, key: CellKey) -> Path:
        return self.out_dir / "cells" / key.slug

    def is_complete(self, key: CellKey) -> bool:
        return (self.cell_dir(key) / RESULT_FILE).exists()

    def pending(self) -> List[CellKey]:
        return [key for key in expand_cells(self.experiment) if not self.is_complete(key)]

    async def execute(
        self, callbacks: CellCallbacks = CellCallbacks()
    ) -> List[CellOutcome]:
        """
        Run every pending cell and rewrite the tables.

        Returns:
            The outcomes of the cells attempted by this call, in cell order.
        """
        self.out_dir.mkdir(parents=True, exist_ok=True)
        cells = expand_cells(self.experiment)
        pending = self.pending()
        logger.info(
            f"{self.experiment.name}: {len(cells)} cells, "
            f"{len(cells) - len(pending)} already complete, {self.jobs} jobs"
        )

        start = get_time_ms()
        if self.jobs == 1 or len(pending) <= 1:
            outcomes = [await self._attempt(key, None, callbacks) for key in pending]
        else:
            level = logging.getLevelName(logging.getLogger().getEffectiveLevel())
            with ProcessPoolExecutor(
                max_workers=self.jobs, initializer=setup_logger, initargs=(level,)
            ) as pool:
                outcomes = list(
                    await asyncio.gather(
                        *(self._attempt(key, pool, callbacks) for key in pending)
                    )
                )
        logger.info(f"{len(pending)} cells ran in {get_time_ms() - start}ms")

        self.write_tables()
        return outcomes

    async def _attempt(
        self,
        key: CellKey,
        pool: Optional[ProcessPoolExecutor],
        callbacks: CellCallbacks,
    ) -> CellOutcome:
        if callbacks.on_start:
            callbacks.on_start(key)
        try:
            if pool is None:
                outcome = await asyncio.to_thread(
                    run_cell, self.experiment, key, self.cell_dir(key)
                )
            else:
                loop = asyncio.get_running_loop()
                outcome = await loop.run_in_executor(
                    pool, run_cell, self.experiment, key, self.cell_dir(key)
                )
        except Exception as e:
            # the worker died before it could record the failure itself
            outcome = CellOutcome.from_error(e, key)
            self.cell_dir(key).mkdir(parents=True, exist_ok=True)
            write_json(self.cell_dir(key) / ERROR_FILE, outcome)

        if outcome.ok:
            if callbacks.on_done:
                callbacks.on_done(outcome)
        elif callbacks.on_error:
            callbacks.on_error(outcome)
        return outcome

    def collect(self) -> List[CellOutcome]:
        """Persisted outcomes of every cell, a result taking precedence over an error."""
        outcomes = []
        for key in expand_cells(self.experiment):
            cell_dir = self.cell_dir(key)
            for name in (RESULT_FILE, ERROR_FILE):
                if (cell_dir / name).exists():
                    outcomes.append(read_json(cell_dir / name, CellOutcome))
                    break
        return outcomes

    def write_tables(self) -> None:
        write_tables(self.collect(), self.out_dir)


def write_tables(outcomes: List[CellOutcome], out_dir: Path) -> None:
    """Rewrite the four sweep tables in cell order."""
    outcomes = sorted(outcomes, key=lambda o: o.key.sort_key())
    ok = [o for o in outcomes if o.ok]
    failed = [o for o in outcomes if not o.ok]

    results = pd.DataFrame(
        [o.result_row() for o in ok], columns=KEY_COLUMNS + METRIC_COLUMNS
    )
    results.to_csv(out_dir / RESULTS_CSV, index=False)

    errors = pd.DataFrame(
        [{**o.key.model_dump(), "error": o.error} for o in failed],
        columns=KEY_COLUMNS + ["error"],
    )
    errors.to_csv(out_dir / ERRORS_CSV, index=False)

    facets = pd.DataFrame(
        [{**o.key.model_dump(), **f.model_dump()} for o in ok for f in o.facets],
        columns=KEY_COLUMNS + list(FacetRecord.model_fields),
    )
    facets.to_csv(out_dir / FACETS_CSV, index=False)

    ecdf = pd.DataFrame(
        [{**o.key.model_dump(), **r.model_dump()} for o in ok for r in o.ecdf],
        columns=KEY_COLUMNS + list(EcdfRecord.model_fields),
    ).astype({"dataset_size": "Int64", "searches": "Int64"})
    ecdf.to_csv(out_dir / ECDF_CSV, index=False)

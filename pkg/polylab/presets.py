import copy
import json
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
from pydantic import ValidationError

from lib.exceptions import ConfigError
from lib.overrides import assign_values_if_path_exists
from lib.utils import substream_seed

from .config import ActiveConfig, CanonicalPreset, ExperimentConfig
from .geometry import HPolytope
from .models import (
    DeviceModel,
    DeviceProblem,
    VoronoiProblem,
    generate_device,
    generate_voronoi,
)
from .schemas import CellKey, ProblemSchema

Problem = Union[VoronoiProblem, DeviceProblem]


# settings that name the cell; sweeping them goes through the experiment matrix
CELL_FIELDS = {"algorithm", "delta"}


def load_experiment(path: Path) -> ExperimentConfig:
    """Read a sweep config and check that its overrides resolve."""
    try:
        with open(path, "r") as file:
            raw = json.load(file)
        experiment = ExperimentConfig.model_validate(raw)
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise ConfigError(f"cannot load experiment config {path}: {e}")

    sample_key = CellKey(
        kind=experiment.problems[0].kind if experiment.problems else "voronoi",
        d=3,
        instance=0,
        delta=experiment.deltas[0] if experiment.deltas else 0.1,
        algorithm="main",
    )
    cell_config(experiment, sample_key)
    return experiment


def expand_cells(experiment: ExperimentConfig) -> List[CellKey]:
    cells = set()
    for matrix in experiment.problems:
        for d in matrix.dims:
            for instance in range(
                matrix.first_instance, matrix.first_instance + matrix.instances
            ):
                for delta in experiment.deltas:
                    for algorithm in experiment.algorithms:
                        cells.add(
                            CellKey(
                                kind=matrix.kind,
                                d=d,
                                instance=instance,
                                delta=delta,
                                algorithm=algorithm,
                            )
                        )
    return sorted(cells, key=CellKey.sort_key)


def problem_seed(experiment: ExperimentConfig, key: CellKey) -> int:
    """Shared by every delta and algorithm of one instance."""
    return substream_seed(experiment.seed, key.kind, key.d, key.instance)


def cell_seed(experiment: ExperimentConfig, key: CellKey) -> int:
    return substream_seed(
        experiment.seed, key.kind, key.d, key.instance, key.delta, key.algorithm
    )


def cell_config(experiment: ExperimentConfig, key: CellKey) -> ActiveConfig:
    """
    Default settings for the cell, with the experiment overrides applied.
    """
    fixed = sorted(CELL_FIELDS & set(experiment.overrides))
    if fixed:
        raise ConfigError(f"overrides may not change the cell key: {fixed}")
    seed = cell_seed(experiment, key)
    base = ActiveConfig.defaults(key.delta, key.algorithm == "baseline", seed=seed)
    return with_overrides(base, {"algorithm": key.algorithm, **experiment.overrides})


def with_overrides(base: ActiveConfig, overrides: Dict[str, Any]) -> ActiveConfig:
    # Clone the settings to avoid mutating the validated object
    settings = copy.deepcopy(base.model_dump())

    assign_values_if_path_exists(settings, overrides)

    try:
        return ActiveConfig.model_validate(settings)
    except ValidationError as e:
        raise ConfigError(f"overrides produce an invalid config: {e}")


def build_problem(
    kind: str, d: int, seed: int, preset: CanonicalPreset = CanonicalPreset()
) -> Problem:
    if kind == "voronoi":
        return generate_voronoi(d, seed)
    if kind == "device":
        return generate_device(d, seed, preset)
    raise ConfigError(f"unknown problem kind {kind!r}")


def problem_to_schema(problem: Problem) -> ProblemSchema:
    if isinstance(problem, VoronoiProblem):
        return ProblemSchema(
            kind="voronoi",
            dim=problem.dim,
            origin=problem.origin.tolist(),
            truth=problem.truth.to_schema(),
            voronoi=problem.to_schema(),
        )
    return ProblemSchema(
        kind="device",
        dim=problem.dim,
        origin=problem.origin.tolist(),
        truth=problem.truth.to_schema(),
        device=problem.device.to_schema(),
    )


def problem_from_schema(schema: ProblemSchema) -> Problem:
    truth = HPolytope.from_schema(schema.truth)
    if schema.kind == "voronoi" and schema.voronoi is not None:
        v = schema.voronoi
        sites = np.array(v.sites, dtype=float).reshape(-1, v.dim)
        return VoronoiProblem(sites, v.home_index, truth)
    if schema.kind == "device" and schema.device is not None:
        return DeviceProblem(DeviceModel.from_schema(schema.device), truth)
    raise ConfigError(f"problem JSON of kind {schema.kind!r} lacks its generator data")

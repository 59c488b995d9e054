import json
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Type, TypeVar

from pydantic import BaseModel, ConfigDict

from lib.exceptions import PolylabError
from lib.json_encoder import dumps

S = TypeVar("S", bound=BaseModel)


class PolytopeSchema(BaseModel):
    dim: int
    A: List[List[float]]
    b: List[float]


class VertexSetSchema(BaseModel):
    dim: int
    points: List[List[float]]


class DeviceSchema(BaseModel):
    n_dots: int
    n_gates: int
    C_DD: List[List[float]]
    C_Dg: List[List[float]]
    e: float = 1.0
    rescale: float = 100.0
    v_ref: Optional[List[float]] = None
    target: Optional[List[int]] = None


class VoronoiSchema(BaseModel):
    dim: int
    sites: List[List[float]]
    home_index: int


class ProblemSchema(BaseModel):
    kind: Literal["voronoi", "device"]
    dim: int
    origin: List[float]
    truth: PolytopeSchema
    voronoi: Optional[VoronoiSchema] = None
    device: Optional[DeviceSchema] = None


class PairSchema(BaseModel):
    xm: List[float]
    xp: List[float]
    label: Optional[int] = None


class DatasetSchema(BaseModel):
    origin: List[float]
    pairs: List[PairSchema]


class FitSchema(BaseModel):
    dim: int
    A: List[List[float]]
    b: List[float]
    objective: float
    assignment: List[int]
    xi_plus: List[float]
    xi_minus: List[float]
    restarts_used: int
    ccp_iterations: int
    converged: bool = True
    best_restart: int = 0
    restart_objectives: List[Optional[float]] = []
    objective_history: List[float] = []
    removed_rows: int = 0


class RoundSchema(BaseModel):
    """One line of a trace.jsonl file."""

    round: int
    dataset_size: int
    A: List[List[float]]
    b: List[float]
    distances_new: List[float]
    # null when undefined (no new points, or no usable estimate)
    max_distance_new: Optional[float] = None
    max_distance_all: Optional[float] = None
    searches: int
    new_searches: int
    inserted: int
    no_exit: int = 0
    fallback: bool = False


class FacetRecord(BaseModel):
    facet: int
    measure: float
    matched: bool
    angle_deg: float


class EcdfRecord(BaseModel):
    target: float
    dataset_size: Optional[int] = None
    searches: Optional[int] = None


class CellKey(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["voronoi", "device"]
    d: int
    instance: int
    delta: float
    algorithm: Literal["main", "baseline", "hull"]

    @property
    def slug(self) -> str:
        return (
            f"{self.kind}-d{self.d}-i{self.instance:03d}"
            f"-delta{self.delta:g}-{self.algorithm}"
        )

    def sort_key(self):
        return (self.kind, self.d, self.instance, self.delta, self.algorithm)


class CellOutcome(BaseModel):
    key: CellKey
    error: Optional[str] = None
    matching_error: Optional[float] = None
    unmatched: Optional[int] = None
    iou: Optional[float] = None
    n_truth_facets: Optional[int] = None
    n_est_facets: Optional[int] = None
    line_searches: Optional[int] = None
    rounds: Optional[int] = None
    dataset_size: Optional[int] = None
    objective: Optional[float] = None
    converged: Optional[bool] = None
    facets: List[FacetRecord] = []
    ecdf: List[EcdfRecord] = []

    @property
    def ok(self) -> bool:
        return self.error is None

    @classmethod
    def from_error(cls, error: Exception, key: CellKey) -> "CellOutcome":
        name = type(error).__name__
        message = str(error)
        if isinstance(error, PolylabError) and error.details:
            message = f"{message} {json.dumps(error.details, default=str)}"
        return cls(key=key, error=f"{name}: {message}")

    def result_row(self) -> Dict[str, object]:
        row = self.key.model_dump()
        row.update(
            self.model_dump(exclude={"key", "error", "facets", "ecdf"}),
        )
        return row


class CellCallbacks(BaseModel):
    on_start: Optional[Callable[[CellKey], None]] = None
    on_done: Optional[Callable[[CellOutcome], None]] = None
    on_error: Optional[Callable[[CellOutcome], None]] = None


def write_json(path: Path, schema: BaseModel) -> None:
    path.write_text(dumps(schema.model_dump(mode="json"), indent=1) + "\n")


def read_json(path: Path, schema: Type[S]) -> S:
    return schema.model_validate_json(Path(path).read_text())

from pathlib import Path
from typing import List, Optional

import numpy as np

from .fitter import MarginModel
from .schemas import RoundSchema


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


class RoundRecord:
    """One validation round: the model under test, what was measured against it, and totals."""

    def __init__(
        self,
        round: int,
        dataset_size: int,
        model: MarginModel,
        distances_new: Optional[np.ndarray] = None,
        max_distance_all: float = float("inf"),
        searches: int = 0,
        new_searches: int = 0,
        inserted: int = 0,
        no_exit: int = 0,
        fallback: bool = False,
    ):
        self.round = round
        self.dataset_size = dataset_size
        self.model = model
        self.distances_new = (
            np.zeros(0) if distances_new is None else np.asarray(distances_new)
        )
        self.max_distance_all = max_distance_all
        self.searches = searches
        self.new_searches = new_searches
        self.inserted = inserted
        self.no_exit = no_exit
        self.fallback = fallback

    @property
    def max_distance_new(self) -> float:
        if len(self.distances_new) == 0:
            return float("inf")
        return float(np.max(self.distances_new))

    def to_schema(self) -> RoundSchema:
        return RoundSchema(
            round=self.round,
            dataset_size=self.dataset_size,
            A=self.model.A_hat.tolist(),
            b=self.model.b_hat.tolist(),
            distances_new=self.distances_new.tolist(),
            max_distance_new=_finite_or_none(self.max_distance_new),
            max_distance_all=_finite_or_none(self.max_distance_all),
            searches=self.searches,
            new_searches=self.new_searches,
            inserted=self.inserted,
            no_exit=self.no_exit,
            fallback=self.fallback,
        )

    @classmethod
    def from_schema(cls, schema: RoundSchema) -> "RoundRecord":
        dim = len(schema.A[0]) if schema.A else 0
        return cls(
            round=schema.round,
            dataset_size=schema.dataset_size,
            model=MarginModel(np.array(schema.A).reshape(-1, dim), schema.b),
            distances_new=np.array(schema.distances_new),
            max_distance_all=(
                float("inf") if schema.max_distance_all is None else schema.max_distance_all
            ),
            searches=schema.searches,
            new_searches=schema.new_searches,
            inserted=schema.inserted,
            no_exit=schema.no_exit,
            fallback=schema.fallback,
        )


class RunTrace:
    def __init__(self, initial_searches: int = 0):
        self.rounds: List[RoundRecord] = []
        self.initial_searches = initial_searches

    def add_round(self, record: RoundRecord):
        if self.rounds and record.searches < self.rounds[-1].searches:
            raise ValueError("cumulative search count went backwards")
        self.rounds.append(record)

    def get_rounds(self) -> List[RoundRecord]:
        return self.rounds

    def __len__(self) -> int:
        return len(self.rounds)

    @property
    def searches(self) -> int:
        if not self.rounds:
            return self.initial_searches
        return self.rounds[-1].searches

    def save(self, path: Path):
        lines = [record.to_schema().model_dump_json() for record in self.rounds]
        Path(path).write_text("".join(line + "\n" for line in lines))

    @classmethod
    def load(cls, path: Path) -> "RunTrace":
        trace = cls()
        for line in Path(path).read_text().splitlines():
            if line.strip():
                trace.add_round(RoundRecord.from_schema(RoundSchema.model_validate_json(line)))
        if trace.rounds:
            first = trace.rounds[0]
            trace.initial_searches = first.searches - first.new_searches
        return trace

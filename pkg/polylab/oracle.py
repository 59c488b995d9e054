import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from lib.exceptions import (
    BoundaryHit,
    DimensionMismatch,
    InconsistentDataset,
    NoExit,
    OracleFailure,
)

from .geometry import HPolytope
from .models import DeviceProblem, VoronoiProblem, ground_state, state_index
from .schemas import DatasetSchema, PairSchema, read_json, write_json

logger = logging.getLogger(__name__)

R_MAX = 40.0
S_MAX_LADDER = (4, 8, 16)
# radix for device state labels, fixed so escalation does not renumber states
LABEL_S_MAX = 16

Answer = Tuple[bool, Optional[int]]


class MembershipOracle(ABC):
    """Answers whether a point is inside the unknown polytope, counting queries."""

    def __init__(self, dim: int):
        self.dim = dim
        self.calls = 0

    def __call__(self, x) -> Answer:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"query has shape {x.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(x)):
            raise OracleFailure("non-finite query point", {"x": x.tolist()})
        self.calls += 1
        return self._query(x)

    @abstractmethod
    def _query(self, x: np.ndarray) -> Answer: ...


class PolytopeOracle(MembershipOracle):
    """Membership in a known H-polytope; the label is the most violated row."""

    def __init__(self, P: HPolytope):
        super().__init__(P.dim)
        self.P = P
        self._norms = np.linalg.norm(P.A, axis=1)

    def _query(self, x: np.ndarray) -> Answer:
        slack = (self.P.A @ x + self.P.b) / self._norms
        k = int(np.argmax(slack))
        if slack[k] <= 0:
            return True, None
        return False, k


class VoronoiOracle(MembershipOracle):
    def __init__(self, problem: VoronoiProblem):
        super().__init__(problem.dim)
        self.problem = problem

    def _query(self, x: np.ndarray) -> Answer:
        nearest = self.problem.nearest_site(x)
        return nearest == self.problem.home_index, nearest


class DeviceOracle(MembershipOracle):
    """Ground-state test in rescaled gate coordinates."""

    def __init__(self, problem: DeviceProblem):
        super().__init__(problem.dim)
        self.device = problem.device

    def _query(self, x: np.ndarray) -> Answer:
        Vg = self.device.to_gate(x)
        for s_max in S_MAX_LADDER:
            try:
                state = ground_state(self.device, Vg, s_max)
                break
            except BoundaryHit:
                continue
        else:
            raise OracleFailure(
                "ground state not bracketed by the largest state box",
                {"x": x.tolist(), "s_max": S_MAX_LADDER[-1]},
            )
        return state == self.device.target, state_index(state, LABEL_S_MAX)


def make_oracle(problem: Union[HPolytope, VoronoiProblem, DeviceProblem]):
    if isinstance(problem, VoronoiProblem):
        return VoronoiOracle(problem)
    if isinstance(problem, DeviceProblem):
        return DeviceOracle(problem)
    if isinstance(problem, HPolytope):
        return PolytopeOracle(problem)
    raise TypeError(f"no oracle for {type(problem).__name__}")


def membership(problem, x) -> Answer:
    return make_oracle(problem)(x)


@dataclass(frozen=True)
class PointPair:
    x_minus: np.ndarray
    x_plus: np.ndarray
    label: Optional[int] = None

    @property
    def width(self) -> float:
        return float(np.linalg.norm(self.x_plus - self.x_minus))

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.x_minus + self.x_plus)


def line_search(
    oracle: MembershipOracle,
    o,
    u,
    delta: float,
    r_max: float = R_MAX,
) -> PointPair:
    """
    Bracket the boundary crossing of the ray o + t u.

    Marches outward with step delta doubling until a point is outside, then
    bisects until the bracket is shorter than delta. The origin is assumed
    to be inside and is not queried.
    """
    o = np.asarray(o, dtype=float)
    u = np.asarray(u, dtype=float)
    norm = np.linalg.norm(u)
    if norm == 0:
        raise ValueError("line search direction is zero")
    u = u / norm

    lo, t = 0.0, delta
    while True:
        t = min(t, r_max)
        inside, label = oracle(o + t * u)
        if not inside:
            hi = t
            break
        lo = t
        if t >= r_max:
            raise NoExit(
                f"ray still inside at r_max={r_max}",
                {"origin": o.tolist(), "direction": u.tolist()},
            )
        t *= 2.0

    while hi - lo >= delta:
        mid = 0.5 * (lo + hi)
        inside, mid_label = oracle(o + mid * u)
        if inside:
            lo = mid
        else:
            hi, label = mid, mid_label
    return PointPair(o + lo * u, o + hi * u, label)


def bracket_from_estimate(o, x, delta: float, label: Optional[int] = None) -> PointPair:
    """Bracket of width delta centered on a boundary estimate x, along the ray from o."""
    o = np.asarray(o, dtype=float)
    x = np.asarray(x, dtype=float)
    u = x - o
    norm = np.linalg.norm(u)
    if norm == 0:
        raise ValueError("boundary estimate coincides with the origin")
    u /= norm
    return PointPair(x - 0.5 * delta * u, x + 0.5 * delta * u, label)


def random_directions(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """n directions uniform on the unit sphere."""
    U = rng.standard_normal((n, d))
    return U / np.linalg.norm(U, axis=1, keepdims=True)


class Dataset:
    """Training pairs collected from line searches around an interior anchor."""

    def __init__(self, origin, pairs: Optional[List[PointPair]] = None):
        self.origin = np.asarray(origin, dtype=float)
        self.pairs: List[PointPair] = []
        for pair in pairs or []:
            self.add(pair)

    @property
    def dim(self) -> int:
        return self.origin.shape[0]

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def X_minus(self) -> np.ndarray:
        return np.array([p.x_minus for p in self.pairs]).reshape(-1, self.dim)

    @property
    def X_plus(self) -> np.ndarray:
        return np.array([p.x_plus for p in self.pairs]).reshape(-1, self.dim)

    @property
    def labels(self) -> List[Optional[int]]:
        return [p.label for p in self.pairs]

    def add(self, pair: PointPair, eps_close: Optional[float] = None) -> bool:
        """Insert unless a stored x_minus lies within eps_close of the new one."""
        if pair.x_minus.shape != (self.dim,) or pair.x_plus.shape != (self.dim,):
            raise DimensionMismatch("pair dimension does not match the dataset")
        if eps_close is not None and self.pairs:
            dist = np.linalg.norm(self.X_minus - pair.x_minus, axis=1)
            if np.min(dist) < eps_close:
                return False
        self.pairs.append(pair)
        return True

    def training_mean(self) -> np.ndarray:
        return self.X_minus.mean(axis=0)

    def verify(self, oracle: MembershipOracle) -> List[int]:
        """Indices of stored pairs that no longer straddle the boundary."""
        bad = []
        for i, pair in enumerate(self.pairs):
            inside, _ = oracle(pair.x_minus)
            outside = not oracle(pair.x_plus)[0]
            if not (inside and outside):
                bad.append(i)
        return bad

    def to_schema(self) -> DatasetSchema:
        return DatasetSchema(
            origin=self.origin.tolist(),
            pairs=[
                PairSchema(xm=p.x_minus.tolist(), xp=p.x_plus.tolist(), label=p.label)
                for p in self.pairs
            ],
        )

    @classmethod
    def from_schema(cls, schema: DatasetSchema) -> "Dataset":
        pairs = [
            PointPair(np.array(p.xm, dtype=float), np.array(p.xp, dtype=float), p.label)
            for p in schema.pairs
        ]
        return cls(np.array(schema.origin, dtype=float), pairs)

    def save(self, path: Path, oracle: Optional[MembershipOracle] = None) -> None:
        """Write the dataset; with an oracle, every pair is re-checked first."""
        if oracle is not None:
            bad = self.verify(oracle)
            if bad:
                raise InconsistentDataset(
                    f"{len(bad)} of {len(self)} pairs do not straddle the boundary",
                    {"pairs": bad[:20]},
                )
        write_json(path, self.to_schema())

    @classmethod
    def load(cls, path: Path) -> "Dataset":
        return cls.from_schema(read_json(path, DatasetSchema))

"""
Exact low-dimensional polytope computations.

Polytopes are held in H-representation {x : A x + b <= 0}. All routines work
in 2 <= d <= 5, where exhaustive d-subset vertex enumeration and an
incremental hull are cheap enough to be the reference implementations.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple, Union

import cvxpy as cp
import numpy as np
from scipy.optimize import linprog

from lib.exceptions import (
    DegenerateInput,
    DimensionMismatch,
    EmptyPolytope,
    SolverFailure,
    Unbounded,
)
from lib.utils import chunked

from .schemas import PolytopeSchema, VertexSetSchema

logger = logging.getLogger(__name__)

EPS_FEAS = 1e-8
EPS_ONFACET = 1e-6
EPS_VERTEX = 1e-7
EPS_RANK = 1e-10

MIN_DIM = 2
MAX_DIM = 5

# d-subsets solved per batch, and the subset count above which rows are
# pre-filtered by linear programs before enumeration
SUBSET_CHUNK = 50_000
SUBSET_LIMIT = 200_000

# strict positivity margin of the positive-spanning test
SPAN_TOL = 1e-9
# chebyshev radius below which an intersection is treated as empty
RADIUS_TOL = 1e-9


def feas_tol(x: np.ndarray) -> np.ndarray:
    """Feasibility tolerance EPS_FEAS * (1 + |x|_inf), row-wise for 2-D input."""
    return EPS_FEAS * (1.0 + np.max(np.abs(x), axis=-1))


@dataclass(frozen=True)
class Hyperplane:
    normal: np.ndarray
    offset: float


@dataclass(frozen=True)
class HPolytope:
    """The set {x : A_k . x + b_k <= 0 for all k}."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise DimensionMismatch(
                f"A has {A.shape[0]} rows but b has {b.shape[0]} entries"
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_halfspaces(self) -> int:
        return self.A.shape[0]

    @property
    def halfspaces(self) -> List[Hyperplane]:
        return [Hyperplane(a.copy(), float(c)) for a, c in zip(self.A, self.b)]

    @classmethod
    def from_halfspaces(cls, halfspaces: Iterable[Hyperplane]) -> "HPolytope":
        halfspaces = list(halfspaces)
        return cls(
            np.array([h.normal for h in halfspaces], dtype=float),
            np.array([h.offset for h in halfspaces], dtype=float),
        )

    @classmethod
    def from_box(cls, lo, hi) -> "HPolytope":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        d = lo.shape[0]
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]), np.concatenate([-hi, lo]))

    def slack(self, points) -> np.ndarray:
        """A x + b for every point, shape (n, N)."""
        X = np.atleast_2d(np.asarray(points, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"points have dim {X.shape[1]}, polytope {self.dim}")
        return X @ self.A.T + self.b

    def contains(self, points, tol: Optional[float] = None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(points, dtype=float))
        norms = np.linalg.norm(self.A, axis=1)
        norms[norms == 0] = 1.0
        slack = self.slack(X) / norms
        bound = feas_tol(X)[:, None] if tol is None else tol
        return np.all(slack <= bound, axis=1)

    def normalized(self) -> "HPolytope":
        A, b, _ = _normalized_system(self)
        return HPolytope(A, b)

    def scaled(self, s: float) -> "HPolytope":
        """The image {s x : x in P}."""
        return HPolytope(self.A / s, self.b.copy())

    def translated(self, t) -> "HPolytope":
        """The image {x + t : x in P}."""
        t = np.asarray(t, dtype=float)
        return HPolytope(self.A.copy(), self.b - self.A @ t)

    def to_schema(self) -> PolytopeSchema:
        return PolytopeSchema(dim=self.dim, A=self.A.tolist(), b=self.b.tolist())

    @classmethod
    def from_schema(cls, schema: PolytopeSchema) -> "HPolytope":
        A = np.array(schema.A, dtype=float).reshape(-1, schema.dim)
        return cls(A, np.array(schema.b, dtype=float))


@dataclass(frozen=True)
class VertexSet:
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "points", np.atleast_2d(np.asarray(self.points, dtype=float))
        )

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def to_schema(self) -> VertexSetSchema:
        return VertexSetSchema(dim=self.dim, points=self.points.tolist())

    @classmethod
    def from_schema(cls, schema: VertexSetSchema) -> "VertexSet":
        return cls(np.array(schema.points, dtype=float).reshape(-1, schema.dim))


@dataclass(frozen=True)
class FacetDescription:
    halfspace_index: int
    incident_vertex_indices: Tuple[int, ...]
    center: np.ndarray
    measure: float


PointsLike = Union[VertexSet, np.ndarray]


def _as_points(points: PointsLike) -> np.ndarray:
    if isinstance(points, VertexSet):
        return points.points
    return np.atleast_2d(np.asarray(points, dtype=float))


def _check_dim(d: int) -> None:
    if not MIN_DIM <= d <= MAX_DIM:
        raise DimensionMismatch(f"dimension {d} outside [{MIN_DIM}, {MAX_DIM}]")


def _normalized_system(P: HPolytope) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Unit-normal copy of the system plus the original index of every kept row.
    Zero rows are dropped when trivially satisfied and signal emptiness otherwise.
    """
    norms = np.linalg.norm(P.A, axis=1)
    zero = norms <= EPS_RANK
    if np.any(zero & (P.b > EPS_FEAS)):
        raise EmptyPolytope(
            "zero-normal row with positive offset",
            {"rows": np.flatnonzero(zero & (P.b > EPS_FEAS)).tolist()},
        )
    keep = np.flatnonzero(~zero)
    return P.A[keep] / norms[keep, None], P.b[keep] / norms[keep], keep


def _affine_rank(X: np.ndarray, tol: float) -> int:
    if X.shape[0] <= 1:
        return 0
    diffs = X[1:] - X[0]
    sv = np.linalg.svd(diffs, compute_uv=False)
    return int(np.sum(sv > tol * max(1.0, sv[0])))


def check_bounded(A: np.ndarray) -> None:
    """
    Raise Unbounded unless the rows of A positively span R^d.

    Solved as: maximize s subject to sum_k lam_k n_k = 0, sum_k lam_k = 1,
    lam_k >= s, over unit normals n_k. The span is positive iff s* > 0 and
    rank(A) = d.
    """
    N, d = A.shape
    if N < d + 1:
        raise Unbounded(f"{N} halfspaces cannot bound R^{d}")
    norms = np.linalg.norm(A, axis=1)
    normals = A / norms[:, None]
    if np.linalg.matrix_rank(normals, tol=EPS_RANK) < d:
        raise Unbounded("normals do not span R^d", {"rank_deficient": True})

    # variables: lam (N), s
    c = np.zeros(N + 1)
    c[-1] = -1.0
    A_eq = np.zeros((d + 1, N + 1))
    A_eq[:d, :N] = normals.T
    A_eq[d, :N] = 1.0
    b_eq = np.zeros(d + 1)
    b_eq[d] = 1.0
    A_ub = np.hstack([-np.eye(N), np.ones((N, 1))])
    b_ub = np.zeros(N)
    bounds = [(0, None)] * N + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs")
    if res.status != 0 or -res.fun <= SPAN_TOL:
        raise Unbounded(
            "normals do not positively span R^d",
            {"status": int(res.status), "margin": None if res.fun is None else -res.fun},
        )


def chebyshev_center(P: HPolytope) -> Tuple[np.ndarray, float]:
    """Center and radius of the largest ball inside P."""
    d = P.dim
    norms = np.linalg.norm(P.A, axis=1)
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([P.A, norms[:, None]])
    bounds = [(None, None)] * d + [(0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=-P.b, bounds=bounds, method="highs")
    if res.status == 2:
        raise EmptyPolytope("halfspace system is infeasible")
    if res.status == 3:
        raise Unbounded("inscribed ball is unbounded")
    if res.status != 0:
        raise SolverFailure("chebyshev LP failed", {"status": int(res.status),
                                                    "message": res.message})
    return res.x[:d], float(res.x[-1])


def _lp_max(c: np.ndarray, A: np.ndarray, b: np.ndarray) -> Optional[float]:
    """max c.x over {A x + b <= 0}; None when unbounded."""
    res = linprog(-c, A_ub=A, b_ub=-b, bounds=[(None, None)] * A.shape[1],
                  method="highs")
    if res.status == 2:
        raise EmptyPolytope("halfspace system is infeasible")
    if res.status == 3:
        return None
    if res.status != 0:
        raise SolverFailure("redundancy LP failed", {"status": int(res.status)})
    return float(-res.fun)


def _prefilter(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Indices of rows that survive an exact redundancy pass.

    A bounding box of P (2d LPs) discards rows that cannot be reached from the
    box; every remaining row is then tested with one LP against the rows still
    kept. Duplicates fall away because the second copy bounds the first.
    """
    N, d = A.shape
    lo = np.empty(d)
    hi = np.empty(d)
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        hi[j] = _lp_max(e, A, b)
        lo[j] = -_lp_max(-e, A, b)
    reach = np.maximum(A * lo, A * hi).sum(axis=1) + b
    kept = list(np.flatnonzero(reach > -EPS_ONFACET))
    logger.debug(f"bounding-box pass kept {len(kept)} of {N} rows")

    for k in list(kept):
        others = [i for i in kept if i != k]
        # cap the tested row one unit past its own boundary to keep the LP bounded
        rows = A[others + [k]]
        offs = np.concatenate([b[others], [b[k] - 1.0]])
        best = _lp_max(A[k], rows, offs)
        if best is not None and best + b[k] <= RADIUS_TOL:
            kept.remove(k)
    logger.debug(f"row LP pass kept {len(kept)} rows")
    return np.array(sorted(kept), dtype=int)


def _dedup(X: np.ndarray, tol: float = EPS_VERTEX) -> np.ndarray:
    """Drop points within tol of an earlier one, then sort lexicographically."""
    if X.shape[0] == 0:
        return X
    order = np.lexsort(X.T[::-1])
    X = X[order]
    kept: List[np.ndarray] = []
    for x in X:
        if kept and np.min(np.linalg.norm(np.asarray(kept) - x, axis=1)) <= tol:
            continue
        kept.append(x)
    return np.asarray(kept)


def _subset_vertices(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    N, d = A.shape
    found = []
    for chunk in chunked(itertools.combinations(range(N), d), SUBSET_CHUNK):
        idx = np.asarray(chunk)
        M = A[idx]
        rhs = -b[idx]
        sv = np.linalg.svd(M, compute_uv=False)
        regular = sv[:, -1] > EPS_RANK * np.maximum(sv[:, 0], 1.0)
        if not np.any(regular):
            continue
        x = np.linalg.solve(M[regular], rhs[regular][..., None])[..., 0]
        slack = x @ A.T + b
        feasible = np.all(slack <= feas_tol(x)[:, None], axis=1)
        found.append(x[feasible])
    if not found:
        return np.empty((0, d))
    return _dedup(np.vstack(found))


def enumerate_vertices(P: HPolytope) -> VertexSet:
    """Extreme points of a bounded polytope, sorted lexicographically."""
    _check_dim(P.dim)
    A, b, _ = _normalized_system(P)
    check_bounded(A)
    if math.comb(A.shape[0], P.dim) > SUBSET_LIMIT:
        keep = _prefilter(A, b)
        A, b = A[keep], b[keep]
    V = _subset_vertices(A, b)
    if V.shape[0] == 0:
        raise EmptyPolytope("no feasible vertex", {"n_halfspaces": P.n_halfspaces})
    return VertexSet(V)


def _incidence(P: HPolytope, V: np.ndarray) -> np.ndarray:
    """Boolean (n_vertices, N) matrix of vertices on each halfspace."""
    norms = np.linalg.norm(P.A, axis=1)
    norms[norms == 0] = 1.0
    return np.abs((V @ P.A.T + P.b) / norms) <= EPS_ONFACET


def _reduce(P: HPolytope) -> Tuple[np.ndarray, np.ndarray]:
    """Indices of facet-defining rows and the vertex set of P."""
    d = P.dim
    V = enumerate_vertices(P).points
    incident = _incidence(P, V)
    seen = set()
    keep = []
    for k in range(P.n_halfspaces):
        inc = np.flatnonzero(incident[:, k])
        if len(inc) < d or _affine_rank(V[inc], EPS_VERTEX) < d - 1:
            continue
        key = tuple(inc.tolist())
        if key in seen:
            continue
        seen.add(key)
        keep.append(k)
    return np.asarray(keep, dtype=int), V


def remove_redundant(P: HPolytope) -> HPolytope:
    keep, _ = _reduce(P)
    return HPolytope(P.A[keep], P.b[keep])


class _Hull:
    """Beneath-beyond hull over a simplicial boundary complex."""

    def __init__(self, X: np.ndarray):
        self.X = X
        self.n, self.d = X.shape
        self.scale = max(1.0, float(np.max(np.abs(X))))
        cap = 64
        self.normals = np.zeros((cap, self.d))
        self.offsets = np.zeros(cap)
        self.verts = np.zeros((cap, self.d), dtype=int)
        self.alive = np.zeros(cap, dtype=bool)
        self.count = 0

    def _grow(self):
        cap = 2 * len(self.offsets)
        for name in ("normals", "offsets", "verts", "alive"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            new[: len(old)] = old
            setattr(self, name, new)

    def _add_facet(self, verts: Tuple[int, ...]):
        P = self.X[list(verts)]
        _, _, vt = np.linalg.svd(P[1:] - P[0])
        n = vt[-1]
        c = -float(n @ P[0])
        if n @ self.interior + c > 0:
            n, c = -n, -c
        if self.count == len(self.offsets):
            self._grow()
        i = self.count
        self.normals[i] = n
        self.offsets[i] = c
        self.verts[i] = sorted(verts)
        self.alive[i] = True
        self.count += 1

    def _initial_simplex(self) -> List[int]:
        X = self.X
        centroid = X.mean(axis=0)
        chosen = [int(np.argmax(np.linalg.norm(X - centroid, axis=1)))]
        basis = np.zeros((0, self.d))
        for _ in range(self.d):
            diffs = X - X[chosen[0]]
            residual = diffs - (diffs @ basis.T) @ basis
            dist = np.linalg.norm(residual, axis=1)
            i = int(np.argmax(dist))
            if dist[i] <= EPS_RANK * self.scale:
                raise DegenerateInput(
                    "points lie in a proper affine subspace",
                    {"affine_rank": len(chosen) - 1, "dim": self.d},
                )
            chosen.append(i)
            basis = np.vstack([basis, residual[i] / dist[i]])
        return chosen

    def build(self) -> "_Hull":
        simplex = self._initial_simplex()
        self.interior = self.X[simplex].mean(axis=0)
        for drop in range(self.d + 1):
            self._add_facet(tuple(v for j, v in enumerate(simplex) if j != drop))

        rest = np.setdiff1d(np.arange(self.n), simplex)
        dist = np.linalg.norm(self.X[rest] - self.interior, axis=1)
        for p in rest[np.argsort(-dist, kind="stable")]:
            self._insert(int(p))
        return self

    def _insert(self, p: int):
        x = self.X[p]
        live = np.flatnonzero(self.alive[: self.count])
        height = self.normals[live] @ x + self.offsets[live]
        visible = live[height > EPS_FEAS * (1.0 + np.max(np.abs(x)))]
        if len(visible) == 0:
            return
        ridges = {}
        for f in visible:
            verts = self.verts[f]
            for j in range(self.d):
                ridge = tuple(np.delete(verts, j).tolist())
                ridges[ridge] = ridges.get(ridge, 0) + 1
        self.alive[visible] = False
        for ridge, seen in ridges.items():
            if seen == 1:
                self._add_facet(ridge + (p,))

    def simplices(self) -> np.ndarray:
        return self.verts[: self.count][self.alive[: self.count]]

    def facet_planes(self) -> Tuple[np.ndarray, np.ndarray]:
        """Live facets with coplanar simplices merged."""
        live = np.flatnonzero(self.alive[: self.count])
        normals = self.normals[live]
        offsets = self.offsets[live]
        merged_n: List[np.ndarray] = []
        merged_c: List[float] = []
        for n, c in zip(normals, offsets):
            if merged_n:
                same = (np.asarray(merged_n) @ n > 1.0 - 1e-9) & (
                    np.abs(np.asarray(merged_c) - c) <= EPS_VERTEX * self.scale
                )
                if np.any(same):
                    continue
            merged_n.append(n)
            merged_c.append(c)
        return np.asarray(merged_n), np.asarray(merged_c)


def convex_hull(points: PointsLike) -> HPolytope:
    """Irredundant outward unit-normal facets of the hull of a point set."""
    X = _as_points(points)
    n, d = X.shape
    _check_dim(d)
    if n < d + 1:
        raise DegenerateInput(f"{n} points cannot span R^{d}")
    A, b = _Hull(X).build().facet_planes()
    return HPolytope(A, b)


def _fan_volume(X: np.ndarray) -> float:
    n, d = X.shape
    if d == 1:
        return float(np.ptp(X[:, 0]))
    hull = _Hull(X).build()
    center = X.mean(axis=0)
    # each boundary simplex has d vertices; with the center they span a d-simplex
    dets = np.linalg.det(X[hull.simplices()] - center)
    return float(np.sum(np.abs(dets)) / math.factorial(d))


def volume(V: PointsLike) -> float:
    """d-volume of the hull of a point set."""
    X = _as_points(V)
    n, d = X.shape
    if d > MAX_DIM:
        raise DimensionMismatch(f"dimension {d} above {MAX_DIM}")
    if n < d + 1:
        raise DegenerateInput(f"{n} points cannot span R^{d}")
    return _fan_volume(X)


def polytope_volume(P: HPolytope) -> float:
    return volume(enumerate_vertices(P))


def _facet_measure(V: np.ndarray, normal: np.ndarray) -> float:
    d = V.shape[1]
    _, _, vt = np.linalg.svd(normal[None, :])
    basis = vt[1:]
    coords = (V - V.mean(axis=0)) @ basis.T
    if d - 1 == 1:
        return float(np.ptp(coords[:, 0]))
    if coords.shape[0] < d:
        return 0.0
    try:
        return _fan_volume(coords)
    except DegenerateInput:
        return 0.0


def facets(P: HPolytope) -> List[FacetDescription]:
    """One description per halfspace of P."""
    V = enumerate_vertices(P).points
    incident = _incidence(P, V)
    out = []
    for k in range(P.n_halfspaces):
        inc = np.flatnonzero(incident[:, k])
        if len(inc) == 0:
            center = np.full(P.dim, np.nan)
            measure = 0.0
        else:
            center = V[inc].mean(axis=0)
            measure = _facet_measure(V[inc], P.A[k] / np.linalg.norm(P.A[k]))
        out.append(FacetDescription(k, tuple(inc.tolist()), center, measure))
    return out


def intersect(P: HPolytope, Q: HPolytope) -> HPolytope:
    if P.dim != Q.dim:
        raise DimensionMismatch(f"cannot intersect dims {P.dim} and {Q.dim}")
    R = HPolytope(np.vstack([P.A, Q.A]), np.concatenate([P.b, Q.b]))
    _, radius = chebyshev_center(R)
    if radius <= RADIUS_TOL:
        raise EmptyPolytope("intersection has no interior", {"radius": radius})
    return remove_redundant(R)


def _project(A: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Nearest points of {A y + b <= 0} to each row of X."""
    m, d = X.shape
    Y = cp.Variable((m, d))
    constraints = [Y @ A.T + np.ones((m, 1)) @ b[None, :] <= 0]
    problem = cp.Problem(cp.Minimize(cp.sum_squares(Y - X)), constraints)
    problem.solve(solver=cp.CLARABEL)
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise SolverFailure("projection program failed", {"status": problem.status})
    return np.asarray(Y.value)


def boundary_distances(P: HPolytope, X) -> np.ndarray:
    """Distance of every row of X to the boundary of P."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A, b, _ = _normalized_system(P)
    slack = X @ A.T + b
    worst = slack.max(axis=1)
    inside = worst <= feas_tol(X)
    out = np.empty(X.shape[0])
    out[inside] = np.maximum(0.0, -worst[inside])
    if np.any(~inside):
        Y = _project(A, b, X[~inside])
        out[~inside] = np.linalg.norm(Y - X[~inside], axis=1)
    return out


def boundary_distance(P: HPolytope, x) -> float:
    return float(boundary_distances(P, np.asarray(x, dtype=float)[None, :])[0])

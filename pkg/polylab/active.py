"""
Active boundary learning.

Each round proposes query points on the boundary of the current estimate
(facet centers, then vertices), line-searches toward them from an interior
anchor, and compares the measured brackets with the estimate. The loop stops
once every new bracket end lies within eps_end of the estimated boundary.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from lib.exceptions import ConfigError, GeometryError, NoExit, SolverFailure

from . import geometry
from .config import ActiveConfig
from .fitter import (
    FitResult,
    MarginModel,
    assign,
    baseline_fit,
    fit_polytope,
    hull_fit,
    objective_value,
    slacks,
)
from .oracle import (
    Dataset,
    MembershipOracle,
    PointPair,
    bracket_from_estimate,
    line_search,
    random_directions,
)
from .schemas import EcdfRecord
from .trace import RoundRecord, RunTrace

logger = logging.getLogger(__name__)

N_TARGETS = 20
TARGET_CEILING = 10.0


def propose_queries(model: MarginModel) -> np.ndarray:
    """Facet centers of the estimate followed by its vertices."""
    P = geometry.remove_redundant(model.polytope())
    centers = [f.center for f in geometry.facets(P)]
    V = geometry.enumerate_vertices(P).points
    return np.vstack([np.asarray(centers), V])


def fit_dataset(X: Dataset, cfg: ActiveConfig) -> FitResult:
    if cfg.algorithm == "baseline":
        return baseline_fit(X, cfg.fit.C, cfg.fit.tau_prune, cfg.fit.solver_tol)
    if cfg.algorithm == "hull":
        return hull_fit(X, cfg.fit.C)
    return fit_polytope(X, cfg.fit)


def _wrap_model(model: MarginModel, X: Dataset, C: float) -> FitResult:
    """FitResult for a model that was given rather than fitted."""
    if len(X) == 0:
        empty = np.zeros(0)
        return FitResult(model, float(np.sum(np.linalg.norm(model.A_hat, axis=1))),
                         empty, empty, np.zeros(0, dtype=int), ccp_iterations=0)
    s = assign(model, X.X_plus)
    xi_plus, xi_minus = slacks(model, X.X_minus, X.X_plus, s)
    return FitResult(model, objective_value(model, xi_plus, xi_minus, C),
                     xi_plus, xi_minus, s, ccp_iterations=0)


class _Searcher:
    """Line searches from the current origin, counting every attempt."""

    def __init__(self, oracle: MembershipOracle, cfg: ActiveConfig):
        self.oracle = oracle
        self.cfg = cfg
        self.count = 0
        self.no_exit = 0

    def __call__(self, origin: np.ndarray, direction: np.ndarray) -> Optional[PointPair]:
        self.count += 1
        try:
            pair = line_search(
                self.oracle, origin, direction, self.cfg.delta, self.cfg.r_max
            )
        except NoExit as e:
            self.no_exit += 1
            logger.warning(f"line search discarded: {e}")
            return None
        if self.cfg.bracket == "centered":
            return bracket_from_estimate(
                origin, pair.midpoint, self.cfg.delta, pair.label
            )
        return pair


def _distances(model: MarginModel, points: np.ndarray) -> Optional[np.ndarray]:
    if len(points) == 0:
        return np.zeros(0)
    try:
        return geometry.boundary_distances(model.polytope(), points)
    except (GeometryError, SolverFailure) as e:
        logger.warning(f"boundary distances unavailable: {e}")
        return None


def active_learn(
    oracle: MembershipOracle,
    o,
    cfg: ActiveConfig,
    initial_model: Optional[MarginModel] = None,
) -> Tuple[FitResult, Dataset, RunTrace]:
    anchor = np.asarray(o, dtype=float)
    inside, _ = oracle(anchor)
    if not inside:
        raise ValueError("the anchor point is not inside the polytope")

    d = anchor.shape[0]
    if cfg.n_init < d + 1:
        raise ConfigError(
            f"n_init must be at least {d + 1} in {d} dimensions, got {cfg.n_init}"
        )
    rng = np.random.default_rng(cfg.seed)
    search = _Searcher(oracle, cfg)
    X = Dataset(anchor)

    if initial_model is None:
        for u in random_directions(rng, cfg.n_init, d):
            pair = search(anchor, u)
            if pair is not None:
                X.add(pair, cfg.eps_close)
        fit = fit_dataset(X, cfg)
    else:
        fit = _wrap_model(initial_model, X, cfg.fit.C)
    trace = RunTrace(initial_searches=search.count)
    logger.info(
        f"initial fit: {len(X)} pairs, {fit.model.n_rows} rows, "
        f"objective {fit.objective:.6g}"
    )

    origin = anchor
    for round_index in range(1, cfg.max_rounds + 1):
        if cfg.origin_mode == "training_mean" and len(X):
            candidate = X.training_mean()
            if oracle(candidate)[0]:
                origin = candidate

        before = search.count
        no_exit_before = search.no_exit
        fallback = False
        try:
            targets = propose_queries(fit.model)
            directions = targets - origin
        except (GeometryError, SolverFailure) as e:
            logger.warning(f"round {round_index}: estimate unusable ({e}), "
                           f"falling back to random directions")
            directions = random_directions(rng, cfg.n_init, d)
            fallback = True

        new_pairs: List[PointPair] = []
        for u in directions:
            if np.linalg.norm(u) <= geometry.EPS_VERTEX:
                continue
            pair = search(origin, u)
            if pair is not None:
                new_pairs.append(pair)

        size_before = len(X)
        if new_pairs:
            ends = np.vstack([[p.x_minus for p in new_pairs], [p.x_plus for p in new_pairs]])
        else:
            ends = np.zeros((0, d))
        distances = None if fallback else _distances(fit.model, ends)
        inserted = sum(X.add(p, cfg.eps_close) for p in new_pairs)

        max_all = float("inf")
        if distances is not None and len(X):
            all_distances = _distances(fit.model, np.vstack([X.X_minus, X.X_plus]))
            if all_distances is not None:
                max_all = float(np.max(all_distances))

        record = RoundRecord(
            round=round_index,
            dataset_size=size_before,
            model=fit.model,
            distances_new=distances,
            max_distance_all=max_all,
            searches=search.count,
            new_searches=search.count - before,
            inserted=inserted,
            no_exit=search.no_exit - no_exit_before,
            fallback=fallback or distances is None,
        )
        trace.add_round(record)
        logger.info(
            f"round {round_index}: |X|={size_before}, searches={record.new_searches}, "
            f"inserted={inserted}, max distance {record.max_distance_new:.4g}"
        )

        if (
            distances is not None
            and len(distances)
            and record.max_distance_new < cfg.eps_end
        ):
            logger.info(
                f"terminated after {round_index} rounds, {search.count} line searches"
            )
            return fit, X, trace

        fit = fit_dataset(X, cfg)

    logger.warning(f"no termination within {cfg.max_rounds} rounds")
    return fit, X, trace


def ecdf_targets(trace: RunTrace, delta: float) -> List[EcdfRecord]:
    """
    For each of 20 geometrically spaced targets between 1.5 delta and 10, the
    first round whose model is within the target of every point measured so far.
    """
    if len(trace) == 0:
        raise ValueError("cannot compute targets of an empty trace")
    targets = np.geomspace(1.5 * delta, TARGET_CEILING, N_TARGETS)
    out = []
    for t in targets:
        record = EcdfRecord(target=float(t))
        for r in trace.get_rounds():
            if r.max_distance_all < t:
                record = EcdfRecord(
                    target=float(t), dataset_size=r.dataset_size, searches=r.searches
                )
                break
        out.append(record)
    return out


def ecdf_curve(
    tables: Sequence[Sequence[EcdfRecord]], field: str = "dataset_size"
) -> Tuple[np.ndarray, np.ndarray]:
    """Fraction of (run, target) pairs reached as a function of the chosen count."""
    reached = [getattr(rec, field) for table in tables for rec in table]
    total = len(reached)
    if total == 0:
        return np.zeros(0), np.zeros(0)
    counts = np.sort(np.array([v for v in reached if v is not None], dtype=float))
    xs = np.unique(counts)
    fractions = np.searchsorted(counts, xs, side="right") / total
    return xs, fractions


def termination_quantile(final_counts: Sequence[int], q: float = 0.75) -> float:
    """Count by which the fraction q of runs had terminated."""
    return float(np.quantile(np.asarray(final_counts, dtype=float), q))

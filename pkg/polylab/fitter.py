"""
Large-margin polytope estimation.

The estimate is the sublevel set {x : max_k A_k . x + b_k <= 0}. Rows are
learned by minimizing sum_k |A_k|_2 + (C / l) (|xi+|^2 + |xi-|^2) where every
inside point must sit below -1 on all rows and every outside point above +1
on its assigned row. Fixing the assignment gives a second-order cone program;
the assignment itself is refreshed by a convex-concave loop.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from lib.exceptions import ConfigError, MaxItersExceeded, SolverFailure

from .config import FitConfig
from .geometry import HPolytope, convex_hull
from .oracle import Dataset
from .schemas import FitSchema

logger = logging.getLogger(__name__)

# pairs scoring above this on a row enter the first constraint-generation pass
ACTIVE_MARGIN = -2.0
MAX_CG_ROUNDS = 30
# relative gap tolerated between the solver value and the recomputed objective
# when the solver reports an inaccurate optimum
INACCURATE_RTOL = 1e-4
# restarts within this relative gap of the best count as ties
SELECT_RTOL = 1e-9


@dataclass(frozen=True)
class MarginModel:
    A_hat: np.ndarray
    b_hat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A_hat", np.atleast_2d(np.asarray(self.A_hat, float)))
        object.__setattr__(self, "b_hat", np.asarray(self.b_hat, float).reshape(-1))

    @property
    def n_rows(self) -> int:
        return self.A_hat.shape[0]

    @property
    def dim(self) -> int:
        return self.A_hat.shape[1]

    def scores(self, X) -> np.ndarray:
        return np.atleast_2d(X) @ self.A_hat.T + self.b_hat

    def decision(self, X) -> np.ndarray:
        """f(x) = max_k A_k . x + b_k."""
        return self.scores(X).max(axis=1)

    def polytope(self) -> HPolytope:
        return HPolytope(self.A_hat, self.b_hat)

    def prune(self, tau: float) -> Tuple["MarginModel", np.ndarray]:
        """
        Drop rows with |A_k| <= tau * max_k |A_k|. Returns the pruned model and
        the original index of each kept row. At least one row always survives.
        """
        norms = np.linalg.norm(self.A_hat, axis=1)
        keep = np.flatnonzero(norms > tau * norms.max())
        if len(keep) == 0:
            keep = np.array([int(np.argmax(norms))])
        return MarginModel(self.A_hat[keep], self.b_hat[keep]), keep


@dataclass
class FitResult:
    model: MarginModel
    objective: float
    xi_plus: np.ndarray
    xi_minus: np.ndarray
    assignment: np.ndarray
    restarts_used: int = 0
    ccp_iterations: int = 1
    converged: bool = True
    best_restart: int = 0
    objective_history: List[float] = field(default_factory=list)
    restart_objectives: List[Optional[float]] = field(default_factory=list)
    removed_rows: int = 0

    def to_schema(self) -> FitSchema:
        return FitSchema(
            dim=self.model.dim,
            A=self.model.A_hat.tolist(),
            b=self.model.b_hat.tolist(),
            objective=self.objective,
            assignment=self.assignment.tolist(),
            xi_plus=self.xi_plus.tolist(),
            xi_minus=self.xi_minus.tolist(),
            restarts_used=self.restarts_used,
            ccp_iterations=self.ccp_iterations,
            converged=self.converged,
            best_restart=self.best_restart,
            restart_objectives=self.restart_objectives,
            objective_history=self.objective_history,
            removed_rows=self.removed_rows,
        )

    @classmethod
    def from_schema(cls, schema: FitSchema) -> "FitResult":
        model = MarginModel(np.array(schema.A).reshape(-1, schema.dim), schema.b)
        return cls(
            model=model,
            objective=schema.objective,
            xi_plus=np.array(schema.xi_plus),
            xi_minus=np.array(schema.xi_minus),
            assignment=np.array(schema.assignment, dtype=int),
            restarts_used=schema.restarts_used,
            ccp_iterations=schema.ccp_iterations,
            converged=schema.converged,
            best_restart=schema.best_restart,
            objective_history=list(schema.objective_history),
            restart_objectives=list(schema.restart_objectives),
            removed_rows=schema.removed_rows,
        )


@dataclass
class SubproblemSolution:
    model: MarginModel
    xi_plus: np.ndarray
    xi_minus: np.ndarray
    objective: float
    status: str
    cg_rounds: int


def assign(model: MarginModel, X_plus) -> np.ndarray:
    """Row with the largest score for every outside point; first index wins ties."""
    if model.n_rows == 0:
        raise ValueError("cannot assign points to an empty model")
    return np.argmax(model.scores(X_plus), axis=1)


def slacks(
    model: MarginModel, X_minus: np.ndarray, X_plus: np.ndarray, assignment: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Smallest feasible slacks of a fixed model."""
    pos = np.einsum("ij,ij->i", X_plus, model.A_hat[assignment]) + model.b_hat[
        assignment
    ]
    xi_plus = np.maximum(0.0, 1.0 - pos)
    xi_minus = np.maximum(0.0, 1.0 + model.decision(X_minus))
    return xi_plus, xi_minus


def objective_value(
    model: MarginModel, xi_plus: np.ndarray, xi_minus: np.ndarray, C: float
) -> float:
    n = len(xi_plus)
    reg = float(np.sum(np.linalg.norm(model.A_hat, axis=1)))
    return reg + C / n * float(xi_plus @ xi_plus + xi_minus @ xi_minus)


def _selector(rows: np.ndarray, n_cols: int) -> sp.csr_matrix:
    m = len(rows)
    return sp.csr_matrix((np.ones(m), (np.arange(m), rows)), shape=(m, n_cols))


def _solve_restricted(
    X_minus: np.ndarray,
    X_plus: np.ndarray,
    s: np.ndarray,
    n_rows: int,
    C: float,
    ii: np.ndarray,
    jj: np.ndarray,
    tol: float,
) -> Tuple[np.ndarray, np.ndarray, float, str]:
    """The program with only the inside constraints (ii[w], jj[w]) imposed."""
    n, d = X_plus.shape
    A = cp.Variable((n_rows, d))
    b = cp.Variable(n_rows)
    t = cp.Variable(n_rows)
    xi_p = cp.Variable(n, nonneg=True)
    xi_m = cp.Variable(n, nonneg=True)

    Sp = _selector(s, n_rows)
    Sj = _selector(jj, n_rows)
    Si = _selector(ii, n)
    constraints = [
        cp.norm(A, 2, axis=1) <= t,
        cp.sum(cp.multiply(Sp @ A, X_plus), axis=1) + Sp @ b >= 1 - xi_p,
        cp.sum(cp.multiply(Sj @ A, X_minus[ii]), axis=1) + Sj @ b <= -1 + Si @ xi_m,
    ]
    penalty = cp.sum_squares(xi_p) + cp.sum_squares(xi_m)
    problem = cp.Problem(cp.Minimize(cp.sum(t) + (C / n) * penalty), constraints)
    try:
        problem.solve(
            solver=cp.CLARABEL,
            tol_gap_abs=tol,
            tol_gap_rel=tol,
            tol_feas=tol,
        )
    except cp.error.SolverError as e:
        raise SolverFailure(
            f"conic solver raised: {e}", {"rows": n_rows, "points": n, "pairs": len(ii)}
        )
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or A.value is None:
        raise SolverFailure(
            f"subproblem ended with status {problem.status}",
            {"status": problem.status, "rows": n_rows, "points": n, "pairs": len(ii)},
        )
    return np.asarray(A.value), np.asarray(b.value), float(problem.value), problem.status


def solve_subproblem(
    X: Dataset,
    assignment,
    n_rows: int,
    C: float,
    solver_tol: float = 1e-8,
    warm: Optional[MarginModel] = None,
) -> SubproblemSolution:
    """
    Solve the fixed-assignment program over n_rows rows.

    Rows that own no outside point are set to A_k = 0, b_k = -1, which is
    optimal for them. The remaining inside constraints are added by constraint
    generation: start from each point's own row (plus rows where the warm model
    scores it near the margin), re-solve while any pair is violated.
    """
    s = np.asarray(assignment, dtype=int)
    X_minus, X_plus = X.X_minus, X.X_plus
    n = len(X)
    if n == 0:
        raise ValueError("cannot fit an empty dataset")
    if s.shape != (n,) or s.min() < 0 or s.max() >= n_rows:
        raise ValueError(f"assignment must index {n_rows} rows for {n} points")
    if C < 0:
        raise ConfigError("C must be non-negative")

    used = np.unique(s)
    local = np.full(n_rows, -1)
    local[used] = np.arange(len(used))
    s_local = local[s]
    m = len(used)

    selected = np.zeros((n, m), dtype=bool)
    selected[np.arange(n), s_local] = True
    if warm is not None and warm.n_rows == n_rows:
        near = X_minus @ warm.A_hat[used].T + warm.b_hat[used] > ACTIVE_MARGIN
        selected |= near

    viol_tol = max(10.0 * solver_tol, 1e-9)
    status = ""
    for cg_round in range(1, MAX_CG_ROUNDS + 2):
        if cg_round > MAX_CG_ROUNDS:
            selected[:] = True
        ii, jj = np.nonzero(selected)
        A_u, b_u, value, status = _solve_restricted(
            X_minus, X_plus, s_local, m, C, ii, jj, solver_tol
        )
        scores = X_minus @ A_u.T + b_u
        imposed = np.where(selected, scores, -np.inf).max(axis=1)
        xi_m_now = np.maximum(0.0, 1.0 + imposed)
        # a pair is violated when it needs more slack than the solution carries
        violated = (scores > -1.0 + xi_m_now[:, None] + viol_tol) & ~selected
        if not violated.any():
            break
        logger.debug(f"constraint generation round {cg_round}: +{violated.sum()} pairs")
        selected |= violated

    A_full = np.zeros((n_rows, X_minus.shape[1]))
    b_full = -np.ones(n_rows)
    A_full[used] = A_u
    b_full[used] = b_u
    model = MarginModel(A_full, b_full)
    xi_plus, xi_minus = slacks(model, X_minus, X_plus, s)
    objective = objective_value(model, xi_plus, xi_minus, C)

    if status == cp.OPTIMAL_INACCURATE:
        gap = abs(objective - value) / max(1.0, abs(objective))
        if gap > INACCURATE_RTOL:
            raise SolverFailure(
                "inaccurate solve failed the residual check",
                {"solver_value": value, "recomputed": objective, "gap": gap},
            )
        logger.debug(f"accepted inaccurate solve, gap {gap:.2e}")
    return SubproblemSolution(model, xi_plus, xi_minus, objective, status, cg_round)


def ccp_fit(
    X: Dataset,
    init: MarginModel,
    C: float,
    tau_prune: float = 1e-6,
    solver_tol: float = 1e-8,
    max_ccp_iters: int = 50,
) -> FitResult:
    """Alternate assignment and subproblem solves until the assignment repeats."""
    if init.n_rows == 0:
        raise ValueError("ccp_fit needs a non-empty initial model")
    X_minus, X_plus = X.X_minus, X.X_plus
    model = init
    history: List[float] = []
    best: Optional[Tuple[float, MarginModel]] = None
    converged = False

    for iteration in range(1, max_ccp_iters + 1):
        s = assign(model, X_plus)
        sol = solve_subproblem(X, s, model.n_rows, C, solver_tol, warm=model)
        history.append(sol.objective)
        pruned, keep = sol.model.prune(tau_prune)
        logger.debug(
            f"ccp iteration {iteration}: objective {sol.objective:.6g}, "
            f"rows {model.n_rows} -> {pruned.n_rows}, status {sol.status}"
        )
        if best is None or sol.objective < best[0]:
            best = (sol.objective, pruned)
        model = pruned
        if np.array_equal(keep[assign(pruned, X_plus)], s):
            converged = True
            break

    if not converged:
        warnings.warn(
            MaxItersExceeded(
                f"assignment did not repeat within {max_ccp_iters} iterations"
            )
        )
        model = best[1]

    s = assign(model, X_plus)
    xi_plus, xi_minus = slacks(model, X_minus, X_plus, s)
    return FitResult(
        model=model,
        objective=objective_value(model, xi_plus, xi_minus, C),
        xi_plus=xi_plus,
        xi_minus=xi_minus,
        assignment=s,
        ccp_iterations=iteration,
        converged=converged,
        objective_history=history,
    )


def hull_init(X: Dataset) -> MarginModel:
    """Hull of the inside points with offsets shifted so every x- scores -1 or less."""
    hull = convex_hull(X.X_minus)
    return MarginModel(hull.A, hull.b - 1.0)


def fit_polytope(X: Dataset, cfg: FitConfig) -> FitResult:
    """Hull-initialized CCP solve followed by noise restarts; lowest objective wins."""
    ccp_kwargs = dict(
        C=cfg.C,
        tau_prune=cfg.tau_prune,
        solver_tol=cfg.solver_tol,
        max_ccp_iters=cfg.max_ccp_iters,
    )
    first = ccp_fit(X, hull_init(X), **ccp_kwargs)
    results: List[Tuple[float, int, FitResult]] = [(first.objective, 0, first)]
    objectives: List[Optional[float]] = [first.objective]
    incumbent = first

    for i in range(1, cfg.n_repeat + 1):
        rng = np.random.default_rng([cfg.seed, i])
        source = incumbent.model if cfg.anneal_incumbent else first.model
        noisy = MarginModel(
            source.A_hat + rng.normal(0.0, cfg.sigma, source.A_hat.shape),
            source.b_hat + rng.normal(0.0, cfg.sigma, source.b_hat.shape),
        )
        try:
            result = ccp_fit(X, noisy, **ccp_kwargs)
        except SolverFailure as e:
            logger.warning(f"restart {i} skipped: {e}")
            objectives.append(None)
            continue
        objectives.append(result.objective)
        results.append((result.objective, i, result))
        if result.objective < incumbent.objective:
            incumbent = result

    lowest = min(r[0] for r in results)
    cutoff = lowest + SELECT_RTOL * max(1.0, abs(lowest))
    _, best_index, best = min((r for r in results if r[0] <= cutoff), key=lambda r: r[1])
    logger.debug(
        f"restart {best_index} selected, objective {best.objective:.6g}, "
        f"{best.model.n_rows} rows"
    )
    if cfg.remove_rows:
        best = remove_rows(X, best, **ccp_kwargs)
    best.restarts_used = cfg.n_repeat
    best.best_restart = best_index
    best.restart_objectives = objectives
    return best


def remove_rows(X: Dataset, fit: FitResult, **ccp_kwargs) -> FitResult:
    """
    Drop rows one at a time, refitting from the rows that remain.

    Rows owning the fewest outside points are tried first. A smaller model
    replaces the current one whenever its objective is no larger; the pass
    repeats until no row can go.
    """
    current = fit
    removed = 0
    while current.model.n_rows > 1:
        counts = np.bincount(current.assignment, minlength=current.model.n_rows)
        for k in np.argsort(counts, kind="stable"):
            rows = np.delete(np.arange(current.model.n_rows), k)
            reduced = MarginModel(current.model.A_hat[rows], current.model.b_hat[rows])
            try:
                trial = ccp_fit(X, reduced, **ccp_kwargs)
            except SolverFailure as e:
                logger.debug(f"removal of row {k} skipped: {e}")
                continue
            if trial.objective <= current.objective:
                removed += current.model.n_rows - trial.model.n_rows
                logger.debug(
                    f"row {k} removed ({counts[k]} points), objective "
                    f"{current.objective:.6g} -> {trial.objective:.6g}"
                )
                current = trial
                break
        else:
            break
    current.removed_rows = removed
    return current


def baseline_fit(
    X: Dataset, C: float, tau_prune: float = 1e-6, solver_tol: float = 1e-8
) -> FitResult:
    """Single convex solve with the assignment given by the true neighbor labels."""
    labels = X.labels
    if any(label is None for label in labels):
        raise ConfigError("baseline fit needs a label on every pair")
    observed = sorted(set(labels))
    index = {label: i for i, label in enumerate(observed)}
    s = np.array([index[label] for label in labels], dtype=int)

    sol = solve_subproblem(X, s, len(observed), C, solver_tol)
    pruned, keep = sol.model.prune(tau_prune)
    remap = np.full(len(observed), -1)
    remap[keep] = np.arange(len(keep))
    assignment = np.where(remap[s] >= 0, remap[s], assign(pruned, X.X_plus))
    return FitResult(
        model=pruned,
        objective=sol.objective,
        xi_plus=sol.xi_plus,
        xi_minus=sol.xi_minus,
        assignment=assignment,
        restarts_used=0,
        ccp_iterations=1,
        objective_history=[sol.objective],
    )


def hull_fit(X: Dataset, C: float) -> FitResult:
    """Convex hull of the bracket midpoints, scored with the large-margin objective."""
    mids = 0.5 * (X.X_minus + X.X_plus)
    hull = convex_hull(mids)
    model = MarginModel(hull.A, hull.b)
    s = assign(model, X.X_plus)
    xi_plus, xi_minus = slacks(model, X.X_minus, X.X_plus, s)
    objective = objective_value(model, xi_plus, xi_minus, C)
    return FitResult(
        model=model,
        objective=objective,
        xi_plus=xi_plus,
        xi_minus=xi_minus,
        assignment=s,
        ccp_iterations=0,
        objective_history=[objective],
    )

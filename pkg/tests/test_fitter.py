import cvxpy as cp
import numpy as np
import pytest

from lib.exceptions import ConfigError
from polylab.config import FitConfig
from polylab.fitter import (
    FitResult,
    MarginModel,
    assign,
    baseline_fit,
    ccp_fit,
    fit_polytope,
    hull_fit,
    hull_init,
    objective_value,
    remove_rows,
    slacks,
    solve_subproblem,
)
from polylab.geometry import HPolytope
from polylab.oracle import Dataset, PointPair, PolytopeOracle, line_search, random_directions


def _dataset(pairs, labels=None) -> Dataset:
    labels = labels or [None] * len(pairs)
    d = len(pairs[0][0])
    return Dataset(
        np.zeros(d),
        [
            PointPair(np.asarray(xm, float), np.asarray(xp, float), label)
            for (xm, xp), label in zip(pairs, labels)
        ],
    )


def _searched(P: HPolytope, n: int, delta: float, seed: int = 0) -> Dataset:
    oracle = PolytopeOracle(P)
    X = Dataset(np.zeros(P.dim))
    for u in random_directions(np.random.default_rng(seed), n, P.dim):
        X.add(line_search(oracle, X.origin, u, delta))
    return X


@pytest.fixture(scope="module")
def wedge():
    """Brackets of width 0.2 across the faces x = 1 and y = 1."""
    pairs, labels = [], []
    for t in np.linspace(-2.0, 0.5, 8):
        pairs.append(((0.9, t), (1.1, t)))
        labels.append(0)
        pairs.append(((t, 0.9), (t, 1.1)))
        labels.append(1)
    return _dataset(pairs, labels)


@pytest.fixture(scope="module")
def square_data():
    return _searched(HPolytope.from_box(-np.ones(2), np.ones(2)), 24, 0.05)


def _unit(v):
    return v / np.linalg.norm(v)


class TestAssign:
    def test_single_row(self):
        model = MarginModel(np.array([[1.0, 2.0]]), np.array([0.0]))
        X_plus = np.random.default_rng(0).standard_normal((5, 2))
        assert np.array_equal(assign(model, X_plus), np.zeros(5, dtype=int))

    def test_largest_score_wins(self):
        model = MarginModel(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2))
        assert assign(model, np.array([[1.0, 0.0], [-1.0, 0.0]])).tolist() == [0, 1]

    def test_first_row_wins_ties(self):
        model = MarginModel(np.array([[1.0, 0.0], [1.0, 0.0]]), np.zeros(2))
        assert assign(model, np.array([[3.0, 1.0]])).tolist() == [0]


def test_slacks_and_objective():
    model = MarginModel(np.array([[1.0, 0.0]]), np.array([0.0]))
    X_minus = np.array([[-1.0, 0.0], [0.5, 0.0]])
    X_plus = np.array([[1.0, 0.0], [0.5, 0.0]])
    xi_plus, xi_minus = slacks(model, X_minus, X_plus, np.zeros(2, dtype=int))
    assert np.allclose(xi_plus, [0.0, 0.5])
    assert np.allclose(xi_minus, [0.0, 1.5])
    assert objective_value(model, xi_plus, xi_minus, C=2.0) == pytest.approx(
        1.0 + 2.0 / 2 * (0.25 + 2.25)
    )


class TestSubproblem:
    def test_single_pair(self):
        X = _dataset([((-1.0, 0.0), (1.0, 0.0))])
        sol = solve_subproblem(X, [0], 1, C=1e4)
        assert np.allclose(sol.model.A_hat, [[1.0, 0.0]], atol=1e-3)
        assert sol.model.b_hat[0] == pytest.approx(0.0, abs=1e-3)

    def test_zero_penalty(self):
        X = _dataset([((-1.0, 0.0), (1.0, 0.0)), ((0.0, -1.0), (0.0, 1.0))])
        sol = solve_subproblem(X, [0, 0], 1, C=0.0)
        assert sol.objective == pytest.approx(0.0, abs=1e-6)

    def test_unused_rows_are_inactive(self):
        X = _dataset([((-1.0, 0.0), (1.0, 0.0))])
        sol = solve_subproblem(X, [1], 3, C=1e3)
        assert np.array_equal(sol.model.A_hat[[0, 2]], np.zeros((2, 2)))
        assert np.array_equal(sol.model.b_hat[[0, 2]], [-1.0, -1.0])

    def test_matches_expanded_program(self, square_data):
        """Constraint generation reaches the optimum of the program with every pair imposed."""
        X, C = square_data, 300.0
        s = assign(hull_init(X), X.X_plus)
        K = int(s.max()) + 1
        sol = solve_subproblem(X, s, K, C)

        X_minus, X_plus = X.X_minus, X.X_plus
        n, d = X_plus.shape
        A = cp.Variable((K, d))
        b = cp.Variable(K)
        xi_p = cp.Variable(n, nonneg=True)
        xi_m = cp.Variable(n, nonneg=True)
        S = np.eye(K)[s]
        inside = X_minus @ A.T + np.ones((n, 1)) @ cp.reshape(b, (1, K))
        constraints = [
            cp.sum(cp.multiply(S @ A, X_plus), axis=1) + S @ b >= 1 - xi_p,
            inside <= -1 + cp.reshape(xi_m, (n, 1)) @ np.ones((1, K)),
        ]
        objective = cp.sum(cp.norm(A, 2, axis=1)) + (C / n) * (
            cp.sum_squares(xi_p) + cp.sum_squares(xi_m)
        )
        problem = cp.Problem(cp.Minimize(objective), constraints)
        problem.solve(solver=cp.SCS, eps=1e-7, max_iters=200_000)

        assert sol.objective == pytest.approx(problem.value, rel=1e-3)

    def test_rejects_bad_input(self):
        X = _dataset([((-1.0, 0.0), (1.0, 0.0))])
        with pytest.raises(ValueError):
            solve_subproblem(X, [2], 2, C=1.0)
        with pytest.raises(ValueError):
            solve_subproblem(Dataset(np.zeros(2)), [], 1, C=1.0)
        with pytest.raises(ConfigError):
            solve_subproblem(X, [0], 1, C=-1.0)


class TestCcpFit:
    def test_wedge_from_six_rows(self, wedge):
        init = MarginModel(
            np.array(
                [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [-1.0, -1.0], [1.0, -1.0]]
            ),
            np.array([0.0, 0.0, -5.0, -5.0, -5.0, -5.0]),
        )
        fit = ccp_fit(wedge, init, C=1e3)
        assert fit.converged
        assert fit.model.n_rows == 2
        normals = np.array([_unit(a) for a in fit.model.A_hat])
        assert normals[np.argmax(normals[:, 0])] @ [1.0, 0.0] > 0.999
        assert normals[np.argmax(normals[:, 1])] @ [0.0, 1.0] > 0.999

    def test_objective_never_increases(self, square_data):
        fit = ccp_fit(square_data, hull_init(square_data), C=300.0)
        history = np.array(fit.objective_history)
        assert np.all(np.diff(history) <= 1e-6 * np.abs(history[:-1]) + 1e-8)

    def test_converged_model_is_a_fixed_point(self, square_data):
        first = ccp_fit(square_data, hull_init(square_data), C=300.0)
        again = ccp_fit(square_data, first.model, C=300.0)
        assert again.converged and again.ccp_iterations == 1
        assert again.objective == pytest.approx(first.objective, rel=1e-5)

    def test_empty_model(self, square_data):
        with pytest.raises(ValueError):
            ccp_fit(square_data, MarginModel(np.zeros((0, 2)), np.zeros(0)), C=1.0)


class TestFitPolytope:
    def test_no_restarts(self, square_data):
        fit = fit_polytope(square_data, FitConfig(C=300.0, n_repeat=0))
        assert fit.best_restart == 0
        assert fit.restarts_used == 0
        assert len(fit.restart_objectives) == 1

    def test_zero_noise_restarts_coincide(self, square_data):
        fit = fit_polytope(square_data, FitConfig(C=300.0, sigma=0.0, n_repeat=2))
        first, *restarts = fit.restart_objectives
        assert restarts[0] == restarts[1]
        assert restarts[0] == pytest.approx(first, rel=1e-5)
        assert fit.best_restart == 0

    def test_best_restart_has_lowest_objective(self, square_data):
        cfg = FitConfig(C=300.0, sigma=0.5, n_repeat=3, seed=4, remove_rows=False)
        fit = fit_polytope(square_data, cfg)
        scored = [v for v in fit.restart_objectives if v is not None]
        assert fit.objective == pytest.approx(min(scored))
        assert fit.restart_objectives[fit.best_restart] == pytest.approx(fit.objective)
        assert fit.objective <= fit.restart_objectives[0]

    def test_anneal_incumbent(self, square_data):
        cfg = FitConfig(C=300.0, sigma=0.5, n_repeat=3, seed=4, anneal_incumbent=True)
        fit = fit_polytope(square_data, cfg)
        assert len(fit.restart_objectives) == 4
        assert fit.objective <= fit.restart_objectives[0]

    def test_deterministic(self, square_data):
        cfg = FitConfig(C=300.0, sigma=0.1, n_repeat=2, seed=1)
        a = fit_polytope(square_data, cfg)
        b = fit_polytope(square_data, cfg)
        assert np.array_equal(a.model.A_hat, b.model.A_hat)
        assert a.restart_objectives == b.restart_objectives

    def test_inside_points_stay_inside(self, square_data):
        fit = fit_polytope(square_data, FitConfig(C=1e4, n_repeat=1))
        decision = fit.model.decision(square_data.X_minus)
        assert np.all(decision < 0)
        # squared hinge: the margin is met up to the recorded slack
        assert np.allclose(np.maximum(0.0, 1.0 + decision), fit.xi_minus)

    def test_schema_round_trip(self, square_data):
        fit = fit_polytope(square_data, FitConfig(C=300.0, n_repeat=0))
        again = FitResult.from_schema(fit.to_schema())
        assert np.array_equal(again.model.A_hat, fit.model.A_hat)
        assert np.array_equal(again.assignment, fit.assignment)
        assert again.objective == fit.objective


class TestRemoveRows:
    def test_split_face_is_merged(self, square_data):
        square = HPolytope.from_box(-np.ones(2), np.ones(2))
        split = np.array([[1.0, 0.02], [1.0, -0.02]])
        init = MarginModel(
            20.0 * np.vstack([square.A, split]),
            20.0 * np.concatenate([square.b, [-1.0, -1.0]]),
        )
        fit = ccp_fit(square_data, init, C=300.0)
        reduced = remove_rows(square_data, fit, C=300.0)
        assert reduced.model.n_rows == 4
        assert reduced.removed_rows == fit.model.n_rows - 4
        assert reduced.objective <= fit.objective
        normals = np.abs([_unit(a) for a in reduced.model.A_hat])
        assert np.all(normals.max(axis=1) > 0.99)

    def test_square_keeps_its_sides(self, square_data):
        fit = fit_polytope(square_data, FitConfig(C=300.0, n_repeat=0))
        assert fit.model.n_rows == 4
        normals = np.abs([_unit(a) for a in fit.model.A_hat])
        assert np.all(normals.max(axis=1) > 0.99)

    def test_disabled(self, square_data):
        cfg = FitConfig(C=300.0, n_repeat=0, remove_rows=False)
        assert fit_polytope(square_data, cfg).removed_rows == 0


class TestBaseline:
    def test_single_label(self, square_data):
        X = Dataset(
            square_data.origin,
            [PointPair(p.x_minus, p.x_plus, 7) for p in square_data.pairs],
        )
        fit = baseline_fit(X, C=300.0)
        assert fit.model.n_rows == 1
        assert np.all(fit.assignment == 0)

    def test_wedge(self, wedge):
        fit = baseline_fit(wedge, C=1e3)
        assert fit.model.n_rows == 2
        assert _unit(fit.model.A_hat[0]) @ [1.0, 0.0] > 0.999
        assert _unit(fit.model.A_hat[1]) @ [0.0, 1.0] > 0.999

    def test_needs_labels(self, square_data):
        X = Dataset(
            square_data.origin,
            [PointPair(p.x_minus, p.x_plus) for p in square_data.pairs],
        )
        with pytest.raises(ConfigError):
            baseline_fit(X, C=1.0)


def test_hull_fit(square_data):
    fit = hull_fit(square_data, C=300.0)
    assert fit.ccp_iterations == 0
    assert fit.model.n_rows >= 4
    mids = 0.5 * (square_data.X_minus + square_data.X_plus)
    assert np.all(fit.model.decision(mids) <= 1e-7)

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lib.exceptions import (
    DegenerateInput,
    DimensionMismatch,
    EmptyPolytope,
    Unbounded,
)
from polylab import geometry
from polylab.geometry import HPolytope


def _solve_exact(M, rhs):
    """Gaussian elimination over the rationals; None when singular."""
    n = len(M)
    rows = [list(M[i]) + [rhs[i]] for i in range(n)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if rows[r][col] != 0), None)
        if pivot is None:
            return None
        rows[col], rows[pivot] = rows[pivot], rows[col]
        for r in range(n):
            if r != col and rows[r][col] != 0:
                f = rows[r][col] / rows[col][col]
                rows[r] = [a - f * c for a, c in zip(rows[r], rows[col])]
    return [rows[i][n] / rows[i][i] for i in range(n)]


def brute_force_vertices(P: HPolytope) -> np.ndarray:
    A = [[Fraction(float(v)) for v in row] for row in P.A]
    b = [Fraction(float(v)) for v in P.b]
    found = []
    for subset in itertools.combinations(range(P.n_halfspaces), P.dim):
        x = _solve_exact([A[i] for i in subset], [-b[i] for i in subset])
        if x is None:
            continue
        if all(sum(a * xi for a, xi in zip(A[k], x)) + b[k] <= 0 for k in range(len(b))):
            found.append([float(v) for v in x])
    return np.unique(np.round(np.array(found), 9), axis=0)


def brute_force_facet_count(X: np.ndarray) -> int:
    n, d = X.shape
    subsets = np.array(list(itertools.combinations(range(n), d)))
    P = X[subsets]
    _, _, vt = np.linalg.svd(P[:, 1:] - P[:, :1])
    normals = vt[:, -1]
    offsets = -np.einsum("ij,ij->i", normals, P[:, 0])
    side = X @ normals.T + offsets
    tol = 1e-9
    return int(np.sum(np.all(side <= tol, axis=0) | np.all(side >= -tol, axis=0)))


def _as_set(X: np.ndarray):
    return {tuple(np.round(x, 6)) for x in X}


class TestEnumerateVertices:
    def test_cube_corners(self, cube3):
        V = geometry.enumerate_vertices(cube3)
        assert len(V) == 8
        assert _as_set(V.points) == set(itertools.product([0.0, 1.0], repeat=3))

    def test_simplex_corners(self, simplex4):
        V = geometry.enumerate_vertices(simplex4)
        assert len(V) == 5
        expected = [np.zeros(4)] + list(np.eye(4))
        assert _as_set(V.points) == _as_set(np.array(expected))

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_rational_brute_force(self, random_polytope, seed):
        d = 3 + seed % 2
        P = random_polytope(np.random.default_rng(seed), d, 6)
        assert P.n_halfspaces <= 12
        V = geometry.enumerate_vertices(P).points
        expected = brute_force_vertices(P)
        assert V.shape == expected.shape
        assert _as_set(V) == _as_set(expected)

    def test_open_side_is_unbounded(self):
        P = HPolytope(np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1]]), np.zeros(3))
        with pytest.raises(Unbounded):
            geometry.enumerate_vertices(P)

    def test_contradictory_box_is_empty(self):
        # x <= 0 and x >= 1 along the first axis
        P = HPolytope.from_box(np.array([1.0, 0, 0]), np.array([0.0, 1, 1]))
        with pytest.raises(EmptyPolytope):
            geometry.enumerate_vertices(P)

    def test_dimension_out_of_range(self):
        P = HPolytope.from_box(np.zeros(6), np.ones(6))
        with pytest.raises(DimensionMismatch):
            geometry.enumerate_vertices(P)

    @given(seed=st.integers(0, 2**32 - 1), d=st.sampled_from([2, 3, 4]))
    def test_vertices_are_feasible_and_tight(self, random_polytope, seed, d):
        P = random_polytope(np.random.default_rng(seed), d, 5)
        V = geometry.enumerate_vertices(P).points
        assert np.all(P.contains(V))
        tight = np.abs(P.normalized().slack(V)) <= geometry.EPS_ONFACET
        assert np.all(tight.sum(axis=1) >= d)


class TestConvexHull:
    def test_cube_corners(self):
        X = np.array(list(itertools.product([0.0, 1.0], repeat=3)))
        H = geometry.convex_hull(X)
        assert H.n_halfspaces == 6
        rows = {tuple(r) for r in np.round(np.column_stack([H.A, H.b]), 6) + 0.0}
        expected = set()
        for e in np.eye(3):
            expected.add(tuple(e) + (-1.0,))
            expected.add(tuple(-e + 0.0) + (0.0,))
        assert rows == expected

    def test_interior_point_is_discarded(self):
        corners = np.vstack([np.zeros(3), np.eye(3)])
        X = np.vstack([corners, corners.mean(axis=0)])
        H = geometry.convex_hull(X)
        assert H.n_halfspaces == 4
        assert np.allclose(np.linalg.norm(H.A, axis=1), 1.0)

    def test_ball_points_against_brute_force(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((50, 4))
        X *= (rng.uniform(size=(50, 1)) ** 0.25) / np.linalg.norm(X, axis=1, keepdims=True)
        H = geometry.convex_hull(X)
        assert np.all(H.slack(X) <= geometry.EPS_FEAS)
        assert H.n_halfspaces == brute_force_facet_count(X)

    def test_outward_orientation(self, random_polytope):
        P = random_polytope(np.random.default_rng(3), 3, 8)
        V = geometry.enumerate_vertices(P).points
        H = geometry.convex_hull(V)
        assert np.all(H.slack(V.mean(axis=0)) < 0)

    @pytest.mark.parametrize("seed", range(50))
    def test_hull_of_vertices_is_the_polytope(self, random_polytope, seed):
        d = 3 + seed % 2
        P = random_polytope(np.random.default_rng(seed), d, 6)
        V = geometry.enumerate_vertices(P).points
        H = geometry.convex_hull(V)
        assert H.n_halfspaces == geometry.remove_redundant(P).n_halfspaces

        rng = np.random.default_rng(seed + 1000)
        lo, hi = V.min(axis=0), V.max(axis=0)
        X = rng.uniform(lo - 0.1, hi + 0.1, size=(100_000, d))
        clear = np.min(np.abs(P.normalized().slack(X)), axis=1) > 1e-7
        assert np.array_equal(P.contains(X[clear]), H.contains(X[clear]))

    def test_planar_points_are_degenerate(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([rng.standard_normal((20, 2)), np.zeros(20)])
        with pytest.raises(DegenerateInput):
            geometry.convex_hull(X)

    def test_too_few_points(self):
        with pytest.raises(DegenerateInput):
            geometry.convex_hull(np.eye(3))


class TestRemoveRedundant:
    def test_slack_constraint_is_dropped(self, cube3):
        P = HPolytope(
            np.vstack([cube3.A, [1.0, 0, 0]]), np.concatenate([cube3.b, [-2.0]])
        )
        R = geometry.remove_redundant(P)
        assert R.n_halfspaces == 6

    def test_exact_duplicates(self, cube3):
        P = HPolytope(np.vstack([cube3.A, cube3.A]), np.concatenate([cube3.b, cube3.b]))
        assert geometry.remove_redundant(P).n_halfspaces == 6

    def test_point_set_unchanged(self, random_polytope):
        rng = np.random.default_rng(11)
        P = random_polytope(rng, 3, 12)
        R = geometry.remove_redundant(P)
        samples = rng.uniform(-3, 3, size=(20_000, 3))
        assert np.array_equal(P.contains(samples), R.contains(samples))

    def test_prefilter_keeps_facets(self, random_polytope):
        P = random_polytope(np.random.default_rng(5), 3, 60)
        A, b, _ = geometry._normalized_system(P)
        keep = geometry._prefilter(A, b)
        facets = geometry.remove_redundant(P)
        assert len(keep) >= facets.n_halfspaces
        kept = HPolytope(A[keep], b[keep])
        assert geometry.remove_redundant(kept).n_halfspaces == facets.n_halfspaces


class TestVolume:
    def test_cube(self, cube3):
        assert geometry.polytope_volume(cube3) == pytest.approx(1.0, rel=1e-12)

    def test_simplex(self, simplex4):
        assert geometry.polytope_volume(simplex4) == pytest.approx(1 / 24, rel=1e-12)

    def test_monte_carlo(self, random_polytope):
        rng = np.random.default_rng(2)
        P = random_polytope(rng, 3, 8)
        V = geometry.enumerate_vertices(P).points
        lo, hi = V.min(axis=0), V.max(axis=0)
        box = float(np.prod(hi - lo))
        n = 1_000_000
        hits = 0
        for _ in range(10):
            hits += int(np.sum(P.contains(rng.uniform(lo, hi, size=(n // 10, 3)))))
        p = hits / n
        estimate = box * p
        stderr = box * math.sqrt(p * (1 - p) / n)
        assert abs(geometry.volume(V) - estimate) <= 4 * stderr

    @given(
        t=st.lists(st.floats(-5, 5), min_size=3, max_size=3),
        s=st.sampled_from([0.5, 2.0]),
    )
    def test_translation_and_scaling(self, random_polytope, t, s):
        P = random_polytope(np.random.default_rng(4), 3, 6)
        base = geometry.polytope_volume(P)
        moved = geometry.polytope_volume(P.translated(np.array(t)))
        scaled = geometry.polytope_volume(P.scaled(s))
        assert moved == pytest.approx(base, rel=1e-9)
        assert scaled == pytest.approx(base * s**3, rel=1e-9)

    def test_degenerate(self):
        X = np.column_stack([np.random.default_rng(0).standard_normal((10, 2)), np.ones(10)])
        with pytest.raises(DegenerateInput):
            geometry.volume(X)


class TestIntersect:
    def test_shifted_cubes(self, cube3):
        R = geometry.intersect(cube3, cube3.translated([0.5, 0, 0]))
        assert geometry.polytope_volume(R) == pytest.approx(0.5)
        assert R.n_halfspaces == 6

    def test_disjoint_cubes(self, cube3):
        with pytest.raises(EmptyPolytope):
            geometry.intersect(cube3, cube3.translated([3.0, 0, 0]))

    def test_dimension_mismatch(self, cube3, simplex4):
        with pytest.raises(DimensionMismatch):
            geometry.intersect(cube3, simplex4)

    def test_sampling_inclusion(self, random_polytope):
        rng = np.random.default_rng(9)
        P = random_polytope(rng, 3, 7)
        Q = random_polytope(rng, 3, 7).translated([0.3, -0.2, 0.1])
        R = geometry.intersect(P, Q)
        vol = geometry.polytope_volume(R)
        assert vol <= min(geometry.polytope_volume(P), geometry.polytope_volume(Q)) + 1e-9
        samples = rng.uniform(-3, 3, size=(100_000, 3))
        both = P.contains(samples, tol=0.0) & Q.contains(samples, tol=0.0)
        inside = R.contains(samples, tol=0.0)
        # disagreement only on boundary-thin sets
        assert np.mean(both != inside) < 1e-4


class TestFacets:
    def test_cube(self, cube3):
        descriptions = geometry.facets(cube3)
        assert len(descriptions) == 6
        for f in descriptions:
            assert f.measure == pytest.approx(1.0)
            assert len(f.incident_vertex_indices) == 4
            assert sorted(np.round(f.center, 9).tolist()).count(0.5) == 2

    def test_simplex_slanted_face(self):
        A = np.vstack([-np.eye(3), np.ones((1, 3))])
        b = np.array([0.0, 0.0, 0.0, -1.0])
        slanted = geometry.facets(HPolytope(A, b))[3]
        assert slanted.measure == pytest.approx(math.sqrt(3) / 2)
        assert np.allclose(slanted.center, np.full(3, 1 / 3))

    def test_square_edges(self):
        square = HPolytope.from_box(np.zeros(2), np.array([2.0, 1.0]))
        measures = sorted(f.measure for f in geometry.facets(square))
        assert measures == pytest.approx([1.0, 1.0, 2.0, 2.0])

    def test_redundant_row_has_zero_measure(self, cube3):
        P = HPolytope(
            np.vstack([cube3.A, [1.0, 0, 0]]), np.concatenate([cube3.b, [-2.0]])
        )
        last = geometry.facets(P)[-1]
        assert last.measure == 0.0
        assert last.incident_vertex_indices == ()


class TestBoundaryDistance:
    @pytest.mark.parametrize(
        "x, expected",
        [
            ([0.5, 0.5, 0.5], 0.5),
            ([1.0, 0.5, 0.5], 0.0),
            ([2.0, 0.5, 0.5], 1.0),
            ([2.0, 2.0, 0.5], math.sqrt(2)),
        ],
    )
    def test_cube(self, cube3, x, expected):
        assert geometry.boundary_distance(cube3, x) == pytest.approx(expected, abs=1e-6)

    def test_batch_matches_single(self, cube3):
        X = np.array([[0.2, 0.5, 0.5], [1.5, 0.5, -1.0]])
        batch = geometry.boundary_distances(cube3, X)
        single = [geometry.boundary_distance(cube3, x) for x in X]
        assert batch == pytest.approx(single, abs=1e-6)


def test_chebyshev_center_of_cube(cube3):
    center, radius = geometry.chebyshev_center(cube3)
    assert np.allclose(center, 0.5)
    assert radius == pytest.approx(0.5)


def test_polytope_schema_round_trip(cube3):
    again = HPolytope.from_schema(cube3.to_schema())
    assert np.array_equal(again.A, cube3.A) and np.array_equal(again.b, cube3.b)

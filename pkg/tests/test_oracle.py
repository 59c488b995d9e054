import numpy as np
import pytest

from lib.exceptions import DimensionMismatch, InconsistentDataset, NoExit, OracleFailure
from polylab.geometry import HPolytope
from polylab.models import generate_device, generate_voronoi
from polylab.oracle import (
    Dataset,
    DeviceOracle,
    MembershipOracle,
    PointPair,
    PolytopeOracle,
    VoronoiOracle,
    bracket_from_estimate,
    line_search,
    make_oracle,
    membership,
    random_directions,
)


class BallOracle(MembershipOracle):
    def __init__(self, d: int, radius: float = 1.0):
        super().__init__(d)
        self.radius = radius

    def _query(self, x):
        return bool(np.linalg.norm(x) <= self.radius), None


@pytest.fixture
def centered_cube() -> HPolytope:
    return HPolytope.from_box(-0.5 * np.ones(3), 0.5 * np.ones(3))


class TestMembership:
    def test_voronoi_origin_and_sites(self):
        problem = generate_voronoi(3, seed=0)
        assert membership(problem, problem.origin)[0]
        other = (problem.home_index + 1) % len(problem.sites)
        inside, label = membership(problem, problem.sites[other])
        assert not inside and label == other

    def test_voronoi_label_is_nearest_site(self):
        problem = generate_voronoi(3, seed=1)
        oracle = VoronoiOracle(problem)
        x = np.array([9.0, 0.0, 0.0])
        assert oracle(x)[1] == problem.nearest_site(x)

    def test_device_anchor_is_inside(self):
        problem = generate_device(3, seed=0)
        oracle = make_oracle(problem)
        assert isinstance(oracle, DeviceOracle)
        assert oracle(problem.origin)[0]

    def test_device_escalates_state_box(self):
        problem = generate_device(3, seed=0)
        oracle = DeviceOracle(problem)
        # roughly ten electrons per dot
        inside, label = oracle(problem.origin - 30.0)
        assert not inside and label is not None

    def test_device_gives_up(self):
        problem = generate_device(3, seed=0)
        with pytest.raises(OracleFailure):
            DeviceOracle(problem)(problem.origin - 1e4)

    def test_polytope_label_is_most_violated_row(self, centered_cube):
        oracle = PolytopeOracle(centered_cube)
        assert oracle(np.zeros(3)) == (True, None)
        assert oracle(np.array([2.0, 0.6, 0.0])) == (False, 0)

    def test_counts_queries(self, centered_cube):
        oracle = make_oracle(centered_cube)
        for _ in range(3):
            oracle(np.zeros(3))
        assert oracle.calls == 3

    def test_rejects_bad_queries(self, centered_cube):
        oracle = make_oracle(centered_cube)
        with pytest.raises(DimensionMismatch):
            oracle(np.zeros(2))
        with pytest.raises(OracleFailure):
            oracle(np.array([np.nan, 0.0, 0.0]))

    def test_unknown_problem(self):
        with pytest.raises(TypeError):
            make_oracle("cube")


class TestLineSearch:
    def test_unit_ball(self):
        pair = line_search(BallOracle(3), np.zeros(3), np.array([1.0, 0, 0]), 0.01)
        assert pair.x_minus[0] <= 1.0 < pair.x_plus[0]
        assert pair.width < 0.01

    def test_cube_diagonal(self, centered_cube):
        u = np.ones(3)
        pair = line_search(make_oracle(centered_cube), np.zeros(3), u, 1e-3)
        # the ray leaves the cube at t = 0.5 * sqrt(3) along the unit diagonal
        t_minus = np.linalg.norm(pair.x_minus)
        t_plus = np.linalg.norm(pair.x_plus)
        assert t_minus <= 0.5 * np.sqrt(3) < t_plus
        assert t_plus - t_minus < 1e-3

    def test_direction_is_normalized(self):
        a = line_search(BallOracle(2), np.zeros(2), np.array([3.0, 4.0]), 0.01)
        b = line_search(BallOracle(2), np.zeros(2), np.array([0.6, 0.8]), 0.01)
        assert np.array_equal(a.x_minus, b.x_minus)

    def test_no_exit(self):
        with pytest.raises(NoExit):
            line_search(BallOracle(3, radius=100.0), np.zeros(3), np.ones(3), 0.1)

    def test_label_comes_from_outside_point(self, centered_cube):
        pair = line_search(make_oracle(centered_cube), np.zeros(3), np.array([0, 1.0, 0.1]), 0.01)
        assert pair.label == 1

    def test_zero_direction(self):
        with pytest.raises(ValueError):
            line_search(BallOracle(3), np.zeros(3), np.zeros(3), 0.1)


def test_bracket_from_estimate():
    pair = bracket_from_estimate(np.zeros(2), np.array([2.0, 0.0]), 0.1)
    assert np.allclose(pair.x_minus, [1.95, 0.0])
    assert np.allclose(pair.x_plus, [2.05, 0.0])
    assert pair.width == pytest.approx(0.1)
    assert np.allclose(pair.midpoint, [2.0, 0.0])


def test_random_directions_are_unit():
    U = random_directions(np.random.default_rng(0), 50, 4)
    assert U.shape == (50, 4)
    assert np.allclose(np.linalg.norm(U, axis=1), 1.0)


class TestDataset:
    def _pair(self, x):
        x = np.asarray(x, dtype=float)
        return PointPair(x, 1.01 * x, label=0)

    def test_close_pairs_are_skipped(self):
        X = Dataset(np.zeros(2))
        assert X.add(self._pair([1.0, 0.0]), eps_close=0.1)
        assert not X.add(self._pair([1.05, 0.0]), eps_close=0.1)
        assert X.add(self._pair([0.0, 1.0]), eps_close=0.1)
        assert len(X) == 2
        assert X.X_minus.shape == (2, 2)

    def test_dimension_mismatch(self):
        X = Dataset(np.zeros(2))
        with pytest.raises(DimensionMismatch):
            X.add(self._pair([1.0, 0.0, 0.0]))

    def test_save_and_load(self, tmp_path):
        X = Dataset(np.zeros(2), [self._pair([1.0, 0.0]), self._pair([0.0, 2.0])])
        X.save(tmp_path / "dataset.json")
        again = Dataset.load(tmp_path / "dataset.json")
        assert np.array_equal(again.X_plus, X.X_plus)
        assert again.labels == [0, 0]

    def test_verify(self):
        oracle = BallOracle(2)
        good = PointPair(np.array([0.99, 0.0]), np.array([1.01, 0.0]))
        bad = PointPair(np.array([1.5, 0.0]), np.array([1.6, 0.0]))
        assert Dataset(np.zeros(2), [good, bad]).verify(oracle) == [1]

    def test_save_rejects_pairs_off_the_boundary(self, tmp_path):
        oracle = BallOracle(2)
        good = PointPair(np.array([0.99, 0.0]), np.array([1.01, 0.0]))
        flipped = PointPair(np.array([0.0, 1.01]), np.array([0.0, 0.99]))
        X = Dataset(np.zeros(2), [good, flipped])
        with pytest.raises(InconsistentDataset) as e:
            X.save(tmp_path / "dataset.json", oracle)
        assert e.value.details["pairs"] == [1]
        assert not (tmp_path / "dataset.json").exists()

        Dataset(np.zeros(2), [good]).save(tmp_path / "dataset.json", oracle)
        assert len(Dataset.load(tmp_path / "dataset.json")) == 1

    def test_empty_arrays_keep_their_width(self):
        X = Dataset(np.zeros(3))
        assert X.X_minus.shape == (0, 3)

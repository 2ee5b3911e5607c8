import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stgode.errors import ShapeError, ValidationError
from stgode.graph import (
    AdjacencyKind,
    RegularizedAdjacency,
    RoadNetwork,
    build_regularized,
    dtw,
    dtw_distance,
    dtw_matrix,
    normalize,
    regularize,
    semantic_adjacency,
    spatial_adjacency,
)
from stgode.oracles import brute_force_dtw, warping_paths
from stgode.verify import random_graph


def net(n, edges):
    return RoadNetwork([f"s{i}" for i in range(n)], edges)


class TestRoadNetwork:
    def test_rejects_bad_edges(self):
        with pytest.raises(ValidationError):
            net(2, [(0, 2, 1.0)])
        with pytest.raises(ValidationError):
            net(2, [(0, 1, -1.0)])
        with pytest.raises(ValidationError):
            net(2, [(0, 1, 1.0), (0, 1, 2.0)])
        with pytest.raises(ValidationError):
            RoadNetwork(["a", "a"], [])


class TestSpatial:
    def test_zero_distance_gives_unit_weight(self):
        a = spatial_adjacency(net(2, [(0, 1, 0.0)]), 10.0, 1.0)
        assert a[0, 1] == a[1, 0] == 1.0

    def test_distance_sigma_below_threshold(self):
        a = spatial_adjacency(net(2, [(0, 1, 10.0)]), 10.0, 0.5)
        assert a[0, 1] == 0.0
        a = spatial_adjacency(net(2, [(0, 1, 10.0)]), 10.0, 0.3)
        assert a[0, 1] == pytest.approx(math.exp(-1))

    def test_missing_edge_is_zero_and_diagonal_zero(self):
        a = spatial_adjacency(net(3, [(0, 1, 1.0)]), 10.0, 0.5)
        assert a[0, 2] == a[1, 2] == 0.0
        assert np.all(np.diag(a) == 0)

    def test_directed_pairs_symmetrized_by_max(self):
        a = spatial_adjacency(net(2, [(0, 1, 1.0), (1, 0, 5.0)]), 10.0, 0.0)
        assert a[0, 1] == a[1, 0] == pytest.approx(math.exp(-0.01))

    def test_sigma_squared_convention(self):
        a = spatial_adjacency(net(2, [(0, 1, 10.0)]), 100.0, 0.0, sigma_squared=True)
        assert a[0, 1] == pytest.approx(math.exp(-1))

    def test_parameter_ranges(self):
        with pytest.raises(ValidationError):
            spatial_adjacency(net(2, []), 0.0, 0.5)
        with pytest.raises(ValidationError):
            spatial_adjacency(net(2, []), 1.0, 1.5)


class TestNormalizeRegularize:
    def test_unit_pair(self):
        np.testing.assert_allclose(normalize([[0, 1], [1, 0]]), [[0, 1], [1, 0]])

    def test_weighted_pair(self):
        np.testing.assert_allclose(normalize([[0, 2], [2, 0]]), [[0, 1], [1, 0]])

    def test_isolated_node_row_is_zero(self):
        out = normalize([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
        assert np.all(out[2] == 0) and np.all(out[:, 2] == 0)

    def test_worked_regularization(self):
        adj = regularize([[0, 1], [1, 0]], 0.8)
        np.testing.assert_allclose(adj.a_hat, 0.4, atol=1e-15)
        np.testing.assert_allclose(adj.eig.values, [0.8, 0.0], atol=1e-15)

    def test_single_isolated_node(self):
        adj = regularize([[0.0]], 0.8)
        np.testing.assert_allclose(adj.a_hat, [[0.4]])

    def test_rejects_invalid(self):
        with pytest.raises(ValidationError):
            normalize([[0, -1], [-1, 0]])
        with pytest.raises(ValidationError):
            normalize([[0, 1], [0, 0]])
        with pytest.raises(ValidationError):
            regularize([[0, 1], [1, 0]], 1.0)
        with pytest.raises(ValidationError):
            regularize([[0, 2], [2, 0]], 0.8)  # spectral radius 2

    def test_constructor_checks_spectrum(self):
        with pytest.raises(ValidationError):
            RegularizedAdjacency(a_hat=np.eye(2), alpha=0.8)
        with pytest.raises(ValidationError):
            RegularizedAdjacency(a_hat=[[0.0, 1.0], [0.0, 0.0]], alpha=0.8)

    def test_eigenvectors_consistent_with_matrix(self):
        adj = build_regularized(random_graph(np.random.default_rng(3), 7), 0.8, "semantic")
        assert adj.kind is AdjacencyKind.SEMANTIC
        np.testing.assert_allclose(adj.eig.reconstruct(), adj.a_hat, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 10_000), st.booleans(), st.floats(0.05, 0.95))
    def test_spectrum_in_zero_alpha(self, n, seed, connected, alpha):
        adj = build_regularized(random_graph(np.random.default_rng(seed), n, connected=connected), alpha)
        vals = np.linalg.eigvalsh(adj.a_hat)
        assert vals.min() >= -1e-8 and vals.max() <= alpha + 1e-8


class TestDtw:
    @pytest.mark.parametrize(
        "x,y,expected",
        [((0, 0, 0), (0, 0, 0), 0.0), ((1, 2, 3), (1, 2, 2, 3), 0.0), ((0, 1), (1, 0), 2.0)],
    )
    def test_worked_examples(self, x, y, expected):
        assert dtw_distance(x, y) == expected

    def test_path_count_is_delannoy(self):
        # central Delannoy numbers count monotone paths on a square grid
        assert [sum(1 for _ in warping_paths(n, n)) for n in (1, 2, 3, 4)] == [1, 3, 13, 63]

    def test_path_length(self):
        assert dtw([1, 2, 3], [1, 2, 2, 3]) == (0.0, 4)
        assert dtw([5.0], [1.0, 2.0, 3.0]) == (9.0, 3)

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.integers(-4, 4), min_size=1, max_size=6), st.lists(st.integers(-4, 4), min_size=1, max_size=6))
    def test_matches_brute_force(self, x, y):
        assert dtw_distance(x, y) == brute_force_dtw(x, y)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(-4, 4), min_size=1, max_size=6), st.lists(st.integers(-4, 4), min_size=1, max_size=6),
           st.integers(0, 5))
    def test_band_matches_brute_force(self, x, y, band):
        if band < abs(len(x) - len(y)):
            with pytest.raises(ValidationError):
                dtw_distance(x, y, band)
        else:
            assert dtw_distance(x, y, band) == brute_force_dtw(x, y, band)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.lists(st.floats(-5, 5), min_size=1, max_size=8))
    def test_symmetric_nonnegative(self, x, y):
        d = dtw_distance(x, y)
        assert d >= 0 and d == pytest.approx(dtw_distance(y, x))
        assert dtw_distance(x, x) == 0

    def test_bad_inputs(self):
        with pytest.raises(ValidationError):
            dtw_distance([], [1.0])
        with pytest.raises(ShapeError):
            dtw_distance([[1.0]], [1.0])


class TestSemantic:
    def test_identical_nodes_linked_and_diagonal_zero(self):
        s = np.array([[0.0, 1, 2, 1], [0.0, 1, 2, 1]])
        a = semantic_adjacency(s, 0.1)
        assert a[0, 1] == a[1, 0] == 1.0
        assert a[0, 0] == a[1, 1] == 0.0

    def test_shifted_node_matches_brute_force_before_threshold(self):
        rng = np.random.default_rng(5)
        base = rng.standard_normal(6)
        s = np.stack([base, rng.standard_normal(6), np.roll(base, 1)])
        z = (s - s.mean(axis=1, keepdims=True)) / s.std(axis=1, keepdims=True)
        cost, length = dtw(z[0], z[2])
        assert cost == pytest.approx(brute_force_dtw(z[0], z[2]), abs=1e-12)
        assert dtw_matrix(z)[0, 2] == pytest.approx(cost / length)

    def test_threshold_and_top_k(self):
        s = np.array([[0.0, 1, 2, 3, 2, 1], [0.0, 1, 2, 3, 2, 1.1], [3.0, 0, 3, 0, 3, 0]])
        a = semantic_adjacency(s, 0.2)
        assert a[0, 1] == 1 and a[0, 2] == 0 and a[1, 2] == 0
        k = semantic_adjacency(s, 0.2, top_k=1)
        assert k[0, 1] == 1 and k[2].sum() == 1 and np.allclose(k, k.T)

    def test_workers_give_same_result(self):
        s = np.random.default_rng(0).standard_normal((6, 20))
        np.testing.assert_array_equal(dtw_matrix(s, workers=3), dtw_matrix(s))

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValidationError):
            semantic_adjacency([[1.0, 2.0], [1.0, 2.0, 3.0]], 0.5)

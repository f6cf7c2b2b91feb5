"""kNN graph construction against a brute-force oracle."""

from __future__ import annotations

import numpy as np
import pytest

from ordembed import KnnGraph, PointCloud, build_knn_graph, dense_k, resolve_k, sparse_k
from ordembed.cloud import pairwise_sq_dists
from ordembed.errors import InvalidInputError, InvalidParameterError


def _brute_force_knn(points, k):
    """Independent oracle: full sort per vertex, ties by ascending id."""
    n = len(points)
    out = []
    for i in range(n):
        cand = [(float(np.sum((points[i] - points[j]) ** 2)), j) for j in range(n) if j != i]
        cand.sort()
        out.append([j for _, j in cand[:k]])
    return np.asarray(out)


def test_collinear_points_match_sort_oracle():
    pts = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
    g = build_knn_graph(PointCloud(points=pts), k=2)
    assert np.array_equal(g.out_neighbors, _brute_force_knn(pts, 2))
    # interior vertex 2 is tied between 1 and 3; both are chosen, id order
    assert list(g.out_neighbors[2]) == [1, 3]


def test_equidistant_tie_prefers_lower_id():
    # vertex 0 sits at the centre of a square: all four corners tie
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    g = build_knn_graph(PointCloud(points=pts), k=2)
    assert list(g.out_neighbors[0]) == [1, 2]


@pytest.mark.parametrize("seed", range(5))
def test_random_clouds_match_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(10, 40))
    d = int(rng.integers(1, 4))
    k = int(rng.integers(1, n - 1))
    pts = rng.normal(size=(n, d))
    g = build_knn_graph(PointCloud(points=pts), k=k)
    assert np.array_equal(g.out_neighbors, _brute_force_knn(pts, k))


def test_coincident_points_never_self_select():
    pts = np.zeros((4, 2))
    g = build_knn_graph(PointCloud(points=pts), k=3)
    for i in range(4):
        assert i not in set(g.out_neighbors[i])
        assert list(g.out_neighbors[i]) == sorted(set(range(4)) - {i})


def test_neighbor_count_rules():
    # the two regimes at the reference size, then a formula spot check
    assert sparse_k(1000) == 14
    assert dense_k(1000) == 84
    for n in (50, 200, 5000):
        assert sparse_k(n) == int(np.ceil(2 * np.log(n)))
        assert dense_k(n) == int(np.ceil(np.sqrt(n * np.log(n))))
    assert resolve_k("sparse", 1000) == 14
    assert resolve_k("dense", 1000) == 84
    assert resolve_k(7, 1000) == 7
    assert resolve_k("7", 1000) == 7


def test_resolve_k_rejects_bad_values():
    with pytest.raises(InvalidParameterError):
        resolve_k("medium", 100)
    with pytest.raises(InvalidParameterError):
        resolve_k(0, 100)
    with pytest.raises(InvalidParameterError):
        resolve_k(100, 100)


def test_point_cloud_validation():
    with pytest.raises(InvalidInputError):
        PointCloud(points=np.array([[np.nan, 0.0]]))
    with pytest.raises(InvalidInputError):
        PointCloud(points=np.zeros((2, 2)), labels=["a"])
    with pytest.raises(InvalidInputError):
        PointCloud(points=np.zeros((2, 2)), labels=["a", "a"])
    with pytest.raises(InvalidInputError):
        PointCloud(points=np.zeros(3))


def test_knn_graph_validation():
    with pytest.raises(InvalidInputError):
        KnnGraph(n=3, k=1, out_neighbors=np.array([[0], [0], [0]]))  # self-loop
    with pytest.raises(InvalidInputError):
        KnnGraph(n=3, k=2, out_neighbors=np.array([[1, 1], [0, 2], [0, 1]]))
    with pytest.raises(InvalidInputError):
        KnnGraph(n=3, k=2, out_neighbors=np.array([[1, 3], [0, 2], [0, 1]]))


def test_adjacency_and_symmetrization():
    pts = np.array([[0.0], [1.0], [3.0]])
    g = build_knn_graph(PointCloud(points=pts), k=1)
    a = g.adjacency()
    assert a.tolist() == [[0, 1, 0], [1, 0, 0], [0, 1, 0]]
    s = g.symmetrized_adjacency()
    assert np.array_equal(s, s.T)
    assert s[1, 2] == 1 and s[2, 1] == 1


def test_pairwise_sq_dists_matches_direct():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(15, 3))
    d2 = pairwise_sq_dists(x)
    direct = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
    assert np.allclose(d2, direct, atol=1e-12)
    assert d2.min() >= 0.0

"""Patch decomposition: clustering quality and cover invariants."""

from __future__ import annotations

from itertools import combinations

import numpy as np
import pytest

import ordembed.patches as patches_mod
from ordembed.cloud import PointCloud, build_knn_graph, sparse_k
from ordembed.datagen import SyntheticDensitySpec, generate
from ordembed.errors import InvalidInputError, InvalidParameterError, StructuralError
from ordembed.patches import Patch, PatchSet, decompose, kmeans, spectral_cluster
from ordembed.rigidity import local_rigidity


def two_cliques(m: int, bridge=True) -> np.ndarray:
    """Two K_m blocks, optionally joined by a single edge."""
    n = 2 * m
    a = np.zeros((n, n), dtype=np.uint8)
    for base in (0, m):
        for i, j in combinations(range(base, base + m), 2):
            a[i, j] = a[j, i] = 1
    if bridge:
        a[m - 1, m] = a[m, m - 1] = 1
    return a


def normalized_cut(adj: np.ndarray, side: np.ndarray) -> float:
    other = ~side
    cut = float(adj[np.ix_(side, other)].sum())
    vol_s = float(adj[side].sum())
    vol_o = float(adj[other].sum())
    return cut * (1.0 / vol_s + 1.0 / vol_o)


class TestSpectralCluster:
    def test_matches_brute_force_ncut_minimum(self):
        adj = two_cliques(4)
        n = 8
        best_cost, best_side = np.inf, None
        # vertex 0 pinned to one side; enumerate the rest
        for bits in range(2 ** (n - 1)):
            side = np.zeros(n, dtype=bool)
            side[0] = True
            for v in range(1, n):
                side[v] = bool((bits >> (v - 1)) & 1)
            if side.all():
                continue
            cost = normalized_cut(adj, side)
            if cost < best_cost:
                best_cost, best_side = cost, side.copy()
        assert set(np.flatnonzero(best_side)) == {0, 1, 2, 3}
        labels = spectral_cluster(adj, 2, seed=0)
        groups = {frozenset(np.flatnonzero(labels == c)) for c in range(2)}
        assert groups == {frozenset(range(4)), frozenset(range(4, 8))}

    def test_sparse_solver_path_agrees(self, monkeypatch):
        adj = two_cliques(4)
        dense = spectral_cluster(adj, 2, seed=0)
        monkeypatch.setattr(patches_mod, "DENSE_EIG_LIMIT", 4)
        sparse = spectral_cluster(adj, 2, seed=0)
        dense_groups = {frozenset(np.flatnonzero(dense == c)) for c in range(2)}
        sparse_groups = {frozenset(np.flatnonzero(sparse == c)) for c in range(2)}
        assert dense_groups == sparse_groups

    def test_rejects_isolated_vertex(self):
        adj = np.zeros((3, 3), dtype=np.uint8)
        adj[0, 1] = adj[1, 0] = 1
        with pytest.raises(StructuralError):
            spectral_cluster(adj, 2)


class TestKmeans:
    def test_recovers_separated_blobs(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            blobs = np.vstack(
                [rng.normal(size=(20, 2)) + off for off in ((0, 0), (30, 0), (0, 30))]
            )
            labels = kmeans(blobs, 3, seed=seed)
            for b in range(3):
                block = labels[b * 20 : (b + 1) * 20]
                assert len(set(block.tolist())) == 1
            assert len(set(labels.tolist())) == 3

    def test_every_cluster_nonempty_with_duplicates(self):
        x = np.array([[0.0, 0.0]] * 6 + [[10.0, 10.0]])
        labels = kmeans(x, 3, seed=0)
        assert len(set(labels.tolist())) == 3

    def test_rejects_too_few_rows(self):
        with pytest.raises(InvalidParameterError):
            kmeans(np.zeros((2, 2)), 3)


class TestDecompose:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_cover_invariants(self, seed):
        cloud = generate(SyntheticDensitySpec(name="pc", n=300, seed=seed))
        graph = build_knn_graph(cloud, k=sparse_k(300))
        pset = decompose(graph, d=2, max_patch_size=80, seed=seed)
        cores = np.concatenate([p.core for p in pset.patches])
        assert sorted(cores.tolist()) == list(range(300))
        for p in pset.patches:
            assert p.size <= 80
            assert np.isin(p.core, p.vertices).all()
            assert np.array_equal(p.vertices, np.unique(p.vertices))
        for i, j in pset.edges:
            assert pset.overlap(i, j).size >= 3  # d + 1
        comp_labels = patches_mod.connected_components(
            pset.patch_adjacency().astype(float)
        )
        assert int(comp_labels.max()) == 0

    def test_pruned_patches_are_locally_rigid(self):
        cloud = generate(SyntheticDensitySpec(name="gauss", n=250, seed=2))
        graph = build_knn_graph(cloud, k=sparse_k(250))
        pset = decompose(graph, d=2, max_patch_size=90, seed=0)
        adj = graph.symmetrized_adjacency()
        for p in pset.patches:
            assert p.rigid is True
            edges = patches_mod._induced_edges(adj, p.vertices)
            verdict, _ = local_rigidity(edges, n=p.size, d=2, seed=11)
            assert verdict

    def test_prune_flag_off_leaves_rigidity_unknown(self):
        cloud = generate(SyntheticDensitySpec(name="pc", n=200, seed=0))
        graph = build_knn_graph(cloud, k=sparse_k(200))
        pset = decompose(graph, d=2, max_patch_size=70, seed=0, prune=False)
        assert all(p.rigid is None for p in pset.patches)

    def test_single_patch_when_small(self):
        cloud = generate(SyntheticDensitySpec(name="gauss", n=60, seed=1))
        graph = build_knn_graph(cloud, k=sparse_k(60))
        pset = decompose(graph, d=2, max_patch_size=100, seed=0)
        assert len(pset.patches) == 1
        assert pset.patches[0].size == 60
        assert np.array_equal(pset.patches[0].core, np.arange(60))
        assert pset.patches[0].rigid is True

    def test_deterministic(self):
        cloud = generate(SyntheticDensitySpec(name="pcs", n=220, seed=4))
        graph = build_knn_graph(cloud, k=sparse_k(220))
        a = decompose(graph, d=2, max_patch_size=75, seed=9)
        b = decompose(graph, d=2, max_patch_size=75, seed=9)
        assert a.to_json() == b.to_json()

    def test_disconnected_graph_rejected(self):
        rng = np.random.default_rng(0)
        pts = np.vstack([rng.normal(size=(30, 2)), rng.normal(size=(30, 2)) + 500.0])
        graph = build_knn_graph(PointCloud(points=pts), k=4)
        with pytest.raises(StructuralError, match="connected"):
            decompose(graph, d=2, max_patch_size=20, seed=0)

    def test_too_small_cap_rejected(self):
        cloud = generate(SyntheticDensitySpec(name="pc", n=50, seed=0))
        graph = build_knn_graph(cloud, k=5)
        with pytest.raises(InvalidParameterError):
            decompose(graph, d=2, max_patch_size=3, seed=0)


class TestPatchSet:
    def _tiny(self):
        return PatchSet(
            n=6,
            d=2,
            patches=[
                Patch(id=0, core=[0, 1, 2], vertices=[0, 1, 2, 3], rigid=True),
                Patch(id=1, core=[3, 4, 5], vertices=[2, 3, 4, 5], rigid=False),
            ],
            edges=[[0, 1]],
        )

    def test_json_round_trip(self):
        pset = self._tiny()
        back = PatchSet.from_json(pset.to_json())
        assert back.n == pset.n and back.d == pset.d
        assert back.to_json() == pset.to_json()
        assert back.patches[1].rigid is False
        assert np.array_equal(back.overlap(0, 1), [2, 3])

    def test_rejects_overlapping_cores(self):
        with pytest.raises(InvalidInputError, match="cores"):
            PatchSet(
                n=4,
                d=2,
                patches=[
                    Patch(id=0, core=[0, 1], vertices=[0, 1]),
                    Patch(id=1, core=[1, 2, 3], vertices=[1, 2, 3]),
                ],
            )

    def test_rejects_uncovered_vertices(self):
        with pytest.raises(InvalidInputError, match="cover"):
            PatchSet(
                n=5,
                d=2,
                patches=[
                    Patch(id=0, core=[0, 1], vertices=[0, 1]),
                    Patch(id=1, core=[2, 3], vertices=[2, 3]),
                ],
            )

    def test_rejects_empty_core(self):
        with pytest.raises(InvalidInputError, match="empty"):
            Patch(id=0, core=np.empty(0, dtype=int), vertices=[0, 1])

"""Patch decomposition for divide-and-conquer embedding.

The vertex set is split into balanced cores by normalized spectral
clustering, each core grows by one hop of the symmetrized graph (up to
a size cap), and optionally sheds its least-connected additions until
the induced patch subgraph is generically locally rigid.  Patches that
share enough vertices are linked in a patch graph; a connected patch
graph is what lets per-patch embeddings be stitched into one map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import ceil
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from .cloud import KnnGraph, connected_components, pairwise_sq_dists
from .errors import InvalidInputError, InvalidParameterError, StructuralError
from .rigidity import local_rigidity

DENSE_EIG_LIMIT = 2000
KMEANS_RESTARTS = 10
KMEANS_ITERS = 100
PRUNE_FRACTION = 0.25


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = pairwise_sq_dists(x, centers[:1]).ravel()
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[c] = x[rng.integers(n)]
            continue
        centers[c] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, pairwise_sq_dists(x, centers[c : c + 1]).ravel())
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, iters: int) -> tuple[np.ndarray, float]:
    n, k = x.shape[0], centers.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        d2 = pairwise_sq_dists(x, centers)
        labels = d2.argmin(axis=1)
        # revive empty clusters with the worst-fit point
        for c in range(k):
            if not (labels == c).any():
                worst = int(d2[np.arange(n), labels].argmax())
                labels[worst] = c
                d2[worst] = np.inf
                d2[worst, c] = 0.0
        new_centers = np.stack([x[labels == c].mean(axis=0) for c in range(k)])
        if np.allclose(new_centers, centers, atol=1e-12):
            centers = new_centers
            break
        centers = new_centers
    inertia = float(pairwise_sq_dists(x, centers)[np.arange(n), labels].sum())
    return labels, inertia


def kmeans(x: np.ndarray, k: int, seed: int = 0,
           restarts: int = KMEANS_RESTARTS) -> np.ndarray:
    """Seeded k-means with k-means++ restarts; returns labels."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < k or k < 1:
        raise InvalidParameterError(
            f"need a 2d array with at least k={k} rows, got shape {x.shape}"
        )
    rng = np.random.default_rng(seed)
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = _kmeanspp_init(x, k, rng)
        labels, inertia = _lloyd(x, centers, KMEANS_ITERS)
        if inertia < best_inertia:
            best_labels, best_inertia = labels, inertia
    return best_labels


def spectral_cluster(adj: np.ndarray, n_clusters: int, seed: int = 0) -> np.ndarray:
    """Normalized spectral clustering of an undirected 0/1 adjacency.

    Rows of the bottom eigenvectors of the symmetric normalized
    Laplacian are length-normalized and clustered by k-means.  Dense
    eigensolves up to ``DENSE_EIG_LIMIT`` vertices, a seeded iterative
    solve beyond that.
    """
    a = np.asarray(adj, dtype=float)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise InvalidInputError(f"adjacency must be square, got {a.shape}")
    if not 1 <= n_clusters <= n:
        raise InvalidParameterError(f"need 1 <= n_clusters <= {n}, got {n_clusters}")
    deg = a.sum(axis=1)
    if (deg <= 0).any():
        raise StructuralError("adjacency has an isolated vertex")
    inv_sqrt = 1.0 / np.sqrt(deg)
    if n <= DENSE_EIG_LIMIT:
        lap = np.eye(n) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
        _, vecs = scipy.linalg.eigh(lap, subset_by_index=(0, n_clusters - 1))
    else:
        # largest eigenpairs of 2I - L are the smallest of L, and the
        # shifted operator is PSD, which iterative solvers like
        norm = sp.csr_matrix(inv_sqrt[:, None] * a * inv_sqrt[None, :])
        shifted = sp.eye(n, format="csr") + norm
        rng = np.random.default_rng(seed)
        vals, vecs = sp.linalg.eigsh(
            shifted, k=n_clusters, which="LA", v0=rng.normal(size=n)
        )
        vecs = vecs[:, np.argsort(-vals)]
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    rows = vecs / np.maximum(norms, 1e-12)
    return kmeans(rows, n_clusters, seed=seed)


@dataclass
class Patch:
    """A core of exclusively-owned vertices plus shared 1-hop padding."""

    id: int
    core: np.ndarray
    vertices: np.ndarray
    rigid: Optional[bool] = None

    def __post_init__(self):
        self.core = np.unique(np.asarray(self.core, dtype=np.int64))
        self.vertices = np.unique(np.asarray(self.vertices, dtype=np.int64))
        if self.core.size == 0:
            raise InvalidInputError(f"patch {self.id} has an empty core")
        if not np.isin(self.core, self.vertices).all():
            raise InvalidInputError(f"patch {self.id} core not inside vertices")

    @property
    def size(self) -> int:
        return int(self.vertices.size)


@dataclass
class PatchSet:
    """All patches of one graph plus their overlap relation."""

    n: int
    d: int
    patches: list[Patch]
    edges: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        ids = [p.id for p in self.patches]
        if ids != list(range(len(self.patches))):
            raise InvalidInputError("patch ids must be 0..len-1 in order")
        cores = np.concatenate([p.core for p in self.patches])
        if len(np.unique(cores)) != len(cores):
            raise InvalidInputError("patch cores overlap")
        if len(cores) != self.n:
            raise InvalidInputError("patch cores do not cover every vertex")
        for p in self.patches:
            if p.vertices.min() < 0 or p.vertices.max() >= self.n:
                raise InvalidInputError(f"patch {p.id} has out-of-range vertices")

    def overlap(self, i: int, j: int) -> np.ndarray:
        return np.intersect1d(self.patches[i].vertices, self.patches[j].vertices)

    def patch_adjacency(self) -> np.ndarray:
        m = len(self.patches)
        a = np.zeros((m, m), dtype=np.uint8)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1
        return a

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "edges": [[int(i), int(j)] for i, j in self.edges],
            "patches": [
                {
                    "id": p.id,
                    "core": [int(v) for v in p.core],
                    "vertices": [int(v) for v in p.vertices],
                    "rigid": p.rigid,
                }
                for p in self.patches
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PatchSet":
        patches = [
            Patch(
                id=int(p["id"]),
                core=np.asarray(p["core"], dtype=np.int64),
                vertices=np.asarray(p["vertices"], dtype=np.int64),
                rigid=p.get("rigid"),
            )
            for p in data["patches"]
        ]
        return cls(
            n=int(data["n"]),
            d=int(data["d"]),
            patches=patches,
            edges=np.asarray(data.get("edges", []), dtype=np.int64).reshape(-1, 2),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PatchSet":
        return cls.from_dict(json.loads(text))


def _induced_edges(adj: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    sub = adj[np.ix_(vertices, vertices)]
    i, j = np.nonzero(np.triu(sub, 1))
    return np.column_stack([i, j])


def _expand_core(adj: np.ndarray, core: np.ndarray, cap: int) -> np.ndarray:
    """Add 1-hop neighbours of the core, best-connected first."""
    in_core = np.zeros(adj.shape[0], dtype=bool)
    in_core[core] = True
    conn = adj[core].sum(axis=0)
    boundary = np.flatnonzero((conn > 0) & ~in_core)
    room = cap - core.size
    if room <= 0 or boundary.size == 0:
        return core.copy()
    order = np.lexsort((boundary, -conn[boundary]))
    take = boundary[order[:room]]
    return np.union1d(core, take)


def _prune_to_rigid(adj, core, vertices, d, seed):
    """Drop weakly attached padding until the patch subgraph is rigid.

    A quarter of the remaining additions (lowest induced degree first)
    goes per round.  The core itself is never dropped; if even the bare
    core fails the test the patch is kept and flagged.
    """
    current = vertices.copy()
    while True:
        edges = _induced_edges(adj, current)
        if current.size < 2:
            rigid = True
        else:
            rigid, _ = local_rigidity(edges, n=current.size, d=d, seed=seed)
        added = np.setdiff1d(current, core)
        if rigid or added.size == 0:
            return current, rigid
        sub_deg = adj[np.ix_(current, current)].sum(axis=1)
        deg_of = dict(zip(current.tolist(), sub_deg.tolist()))
        order = sorted(added.tolist(), key=lambda v: (deg_of[v], v))
        drop = order[: ceil(added.size * PRUNE_FRACTION)]
        current = np.setdiff1d(current, np.asarray(drop, dtype=np.int64))


def decompose(graph: KnnGraph, d: int, max_patch_size: int, seed: int = 0,
              prune: bool = True) -> PatchSet:
    """Cover a connected kNN graph with overlapping rigid-ish patches.

    Cores come from spectral clustering into ceil(2n / max_patch_size)
    groups, so a grown patch averages about half the cap and has head
    room for overlap.  Every pair of patches sharing at least d + 1
    vertices is joined in the patch graph, which must come out
    connected.  With ``prune`` disabled the rigidity flag stays None.
    """
    if max_patch_size < d + 2:
        raise InvalidParameterError(
            f"max_patch_size must be at least d + 2 = {d + 2}, got {max_patch_size}"
        )
    adj = graph.symmetrized_adjacency()
    labels = connected_components(adj)
    n_comp = int(labels.max()) + 1
    if n_comp > 1:
        raise StructuralError(f"graph has {n_comp} connected components; need 1")
    n = graph.n
    if n <= max_patch_size:
        all_v = np.arange(n)
        rigid = None
        if prune:
            rigid, _ = local_rigidity(_induced_edges(adj, all_v), n=n, d=d, seed=seed)
        patch = Patch(id=0, core=all_v, vertices=all_v, rigid=rigid)
        return PatchSet(n=n, d=d, patches=[patch])

    n_clusters = ceil(2 * n / max_patch_size)
    for attempt in range(5):
        cluster_labels = spectral_cluster(adj, n_clusters, seed=seed + attempt)
        cores = [np.flatnonzero(cluster_labels == c) for c in range(n_clusters)]
        cores = [c for c in cores if c.size > 0]
        if max(c.size for c in cores) <= max_patch_size:
            break
        n_clusters += 1  # an oversized core cannot be capped; split finer
    else:
        raise StructuralError("clustering kept producing oversized cores")

    patches = []
    for pid, core in enumerate(cores):
        verts = _expand_core(adj, core, max_patch_size)
        rigid = None
        if prune:
            verts, rigid = _prune_to_rigid(adj, core, verts, d, seed)
        patches.append(Patch(id=pid, core=core, vertices=verts, rigid=rigid))

    pair_edges = []
    for i in range(len(patches)):
        for j in range(i + 1, len(patches)):
            shared = np.intersect1d(patches[i].vertices, patches[j].vertices)
            if shared.size >= d + 1:
                pair_edges.append((i, j))
    pset = PatchSet(n=n, d=d, patches=patches,
                    edges=np.asarray(pair_edges, dtype=np.int64).reshape(-1, 2))

    if len(patches) > 1:
        comp = connected_components(pset.patch_adjacency().astype(float))
        if int(comp.max()) + 1 > 1:
            raise StructuralError(
                "patch graph is disconnected; patches share too few vertices "
                "(try a larger max_patch_size)"
            )
    return pset

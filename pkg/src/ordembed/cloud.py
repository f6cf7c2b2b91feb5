"""Point clouds and directed k-nearest-neighbour graphs.

The kNN graph is the only observation the embedding pipeline gets to
see: an unweighted directed graph where vertex ``a`` points at its ``k``
nearest neighbours.  Construction is deterministic, distance ties are
broken by ascending vertex id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInputError, InvalidParameterError


def sparse_k(n: int) -> int:
    """Connectivity-regime neighbour count, ceil(2 ln n)."""
    if n < 2:
        raise InvalidParameterError(f"need n >= 2, got {n}")
    return int(math.ceil(2.0 * math.log(n)))


def dense_k(n: int) -> int:
    """Dense-regime neighbour count, ceil(sqrt(n ln n))."""
    if n < 2:
        raise InvalidParameterError(f"need n >= 2, got {n}")
    return int(math.ceil(math.sqrt(n * math.log(n))))


def resolve_k(spec: int | str, n: int) -> int:
    """Turn a ``k`` setting (integer, 'sparse' or 'dense') into a count."""
    if isinstance(spec, str):
        name = spec.strip().lower()
        if name == "sparse":
            return sparse_k(n)
        if name == "dense":
            return dense_k(n)
        try:
            spec = int(name)
        except ValueError:
            raise InvalidParameterError(
                f"k must be an integer, 'sparse' or 'dense', got {spec!r}"
            ) from None
    k = int(spec)
    if not 1 <= k < n:
        raise InvalidParameterError(f"need 1 <= k < n, got k={k}, n={n}")
    return k


@dataclass
class PointCloud:
    """An ordered set of n points in R^d, with optional per-point labels.

    ``points`` has shape (n, d).  Coordinates must be finite; labels,
    when present, must be unique and match the number of points.
    """

    points: np.ndarray
    labels: Optional[list[str]] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            raise InvalidInputError(
                f"points must be a 2-d array, got shape {self.points.shape}"
            )
        n, d = self.points.shape
        if n < 1 or d < 1:
            raise InvalidInputError(f"need n >= 1 and d >= 1, got shape ({n}, {d})")
        if not np.isfinite(self.points).all():
            raise InvalidInputError("points contain non-finite coordinates")
        if self.labels is not None:
            if len(self.labels) != n:
                raise InvalidInputError(
                    f"{len(self.labels)} labels for {n} points"
                )
            if len(set(self.labels)) != n:
                raise InvalidInputError("labels are not unique")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class KnnGraph:
    """Directed kNN graph: vertex a points at its k nearest neighbours.

    ``out_neighbors`` has shape (n, k); row a lists a's neighbours in
    ascending distance order (ties by vertex id).  No self-loops, no
    duplicates within a row.
    """

    n: int
    k: int
    out_neighbors: np.ndarray
    _nbr_sets: list[frozenset] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.out_neighbors = np.asarray(self.out_neighbors, dtype=np.int64)
        if not 1 <= self.k < self.n:
            raise InvalidInputError(f"need 1 <= k < n, got k={self.k}, n={self.n}")
        if self.out_neighbors.shape != (self.n, self.k):
            raise InvalidInputError(
                f"out_neighbors shape {self.out_neighbors.shape} does not match "
                f"(n, k) = ({self.n}, {self.k})"
            )
        if self.out_neighbors.min() < 0 or self.out_neighbors.max() >= self.n:
            raise InvalidInputError("neighbour id out of range")
        rows = np.arange(self.n)[:, None]
        if np.any(self.out_neighbors == rows):
            raise InvalidInputError("graph contains a self-loop")
        sorted_rows = np.sort(self.out_neighbors, axis=1)
        if np.any(sorted_rows[:, 1:] == sorted_rows[:, :-1]):
            raise InvalidInputError("duplicate neighbour within a row")

    def adjacency(self) -> np.ndarray:
        """Dense 0/1 adjacency matrix A with A[a, b] = 1 iff a -> b."""
        a = np.zeros((self.n, self.n), dtype=np.uint8)
        rows = np.repeat(np.arange(self.n), self.k)
        a[rows, self.out_neighbors.ravel()] = 1
        return a

    def symmetrized_adjacency(self) -> np.ndarray:
        """0/1 matrix of A or A^T: an edge when either endpoint chose the other."""
        a = self.adjacency()
        return np.maximum(a, a.T)

    def edge_array(self) -> np.ndarray:
        """All directed edges as an (n*k, 2) array of (src, dst) rows."""
        src = np.repeat(np.arange(self.n), self.k)
        return np.column_stack([src, self.out_neighbors.ravel()])

    def has_edge(self, a: int, b: int) -> bool:
        if self._nbr_sets is None:
            self._nbr_sets = [frozenset(row) for row in self.out_neighbors]
        return b in self._nbr_sets[a]


def connected_components(adj: np.ndarray) -> np.ndarray:
    """Component label per vertex of an undirected 0/1 adjacency matrix."""
    import scipy.sparse as sp
    from scipy.sparse.csgraph import connected_components as _cc

    _, labels = _cc(sp.csr_matrix(np.asarray(adj)), directed=False)
    return labels


def pairwise_sq_dists(x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """Squared Euclidean distances between rows of x and rows of y.

    Uses the Gram-matrix expansion; small negatives from cancellation
    are clamped to zero.
    """
    x = np.asarray(x, dtype=float)
    self_distances = y is None
    y = x if self_distances else np.asarray(y, dtype=float)
    xn = (x * x).sum(axis=1)
    yn = xn if self_distances else (y * y).sum(axis=1)
    d2 = xn[:, None] + yn[None, :] - 2.0 * (x @ y.T)
    np.maximum(d2, 0.0, out=d2)
    if self_distances:
        np.fill_diagonal(d2, 0.0)
    return d2


def build_knn_graph(cloud: PointCloud, k: int) -> KnnGraph:
    """Directed kNN graph of a cloud under the Euclidean metric.

    Deterministic: among equidistant candidates the lower vertex id
    wins.  Coincident points are allowed; a point never selects itself.
    """
    n = cloud.n
    if not 1 <= k < n:
        raise InvalidParameterError(f"need 1 <= k < n, got k={k}, n={n}")
    pts = cloud.points
    out = np.empty((n, k), dtype=np.int64)
    ids = np.arange(n)
    # Chunk the distance matrix so large clouds stay within memory.
    chunk = max(1, int(2**24 // max(n, 1)))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = pairwise_sq_dists(pts[start:stop], pts)
        block = np.arange(start, stop)
        d2[block - start, block] = np.inf  # exclude self
        for i in range(stop - start):
            # lexsort: primary key distance, secondary key vertex id
            order = np.lexsort((ids, d2[i]))
            out[start + i] = order[:k]
    return KnnGraph(n=n, k=k, out_neighbors=out)

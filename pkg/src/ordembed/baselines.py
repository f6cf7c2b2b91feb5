"""Reference embedders: classical MDS, stress majorization, eigenmaps.

These provide initialisation and comparison points for the ordinal
pipeline.  The first two operate on a full distance matrix, the third
directly on a kNN graph.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

from .cloud import KnnGraph, PointCloud, connected_components
from .errors import (
    DegenerateInputError,
    InvalidInputError,
    InvalidParameterError,
    StructuralError,
)


def _check_distance_matrix(dist: np.ndarray) -> np.ndarray:
    d = np.asarray(dist, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise InvalidInputError(f"distance matrix must be square, got {d.shape}")
    if not np.isfinite(d).all():
        raise InvalidInputError("distance matrix contains non-finite entries")
    scale = np.abs(d).max(initial=0.0)
    if not np.allclose(d, d.T, atol=1e-8 * max(scale, 1.0), rtol=0.0):
        raise InvalidInputError("distance matrix is not symmetric")
    if np.abs(np.diag(d)).max(initial=0.0) > 1e-9 * max(scale, 1.0):
        raise InvalidInputError("distance matrix has a nonzero diagonal")
    if d.min() < 0.0:
        raise InvalidInputError("distance matrix has negative entries")
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def _fix_column_signs(x: np.ndarray) -> np.ndarray:
    """Deterministic sign convention: largest-|entry| coordinate positive."""
    for j in range(x.shape[1]):
        col = x[:, j]
        if col.size == 0:
            continue
        lead = np.argmax(np.abs(col))
        if col[lead] < 0.0:
            x[:, j] = -col
    return x


def classical_mds(dist: np.ndarray, d: int) -> PointCloud:
    """Torgerson embedding from double-centred squared distances.

    Negative eigenvalues of the centred Gram matrix mean the distances
    are not Euclidean in d dimensions; affected axes are clamped to
    zero with a warning.
    """
    dm = _check_distance_matrix(dist)
    n = dm.shape[0]
    if not 1 <= d < n:
        raise InvalidParameterError(f"need 1 <= d < n, got d={d}, n={n}")
    h = np.eye(n) - np.full((n, n), 1.0 / n)
    b = -0.5 * h @ (dm * dm) @ h
    evals, evecs = scipy.linalg.eigh(b, subset_by_index=(n - d, n - 1))
    order = np.argsort(evals)[::-1]  # descending
    evals, evecs = evals[order], evecs[:, order]
    if evals.min() < 0.0:
        warnings.warn(
            "distance matrix is not Euclidean-embeddable in "
            f"{d} dimensions; clamping negative eigenvalues",
            stacklevel=2,
        )
        evals = np.clip(evals, 0.0, None)
    coords = evecs * np.sqrt(evals)[None, :]
    return PointCloud(points=_fix_column_signs(coords))


def stress_mds(
    dist: np.ndarray,
    d: int,
    weights: np.ndarray | None = None,
    iters: int = 300,
    init: np.ndarray | None = None,
    tol: float = 1e-9,
) -> PointCloud:
    """Weighted stress majorization (Guttman transform iteration).

    Starts from classical MDS unless an init is given; stress is
    non-increasing by construction and iteration stops early when its
    relative decrease falls below ``tol``.
    """
    dm = _check_distance_matrix(dist)
    n = dm.shape[0]
    if not 1 <= d < n:
        raise InvalidParameterError(f"need 1 <= d < n, got d={d}, n={n}")
    if iters < 0:
        raise InvalidParameterError(f"need iters >= 0, got {iters}")
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != dm.shape:
            raise InvalidInputError("weights shape must match distances")
        if weights.min() < 0.0:
            raise InvalidInputError("weights must be nonnegative")
        weights = 0.5 * (weights + weights.T)
        np.fill_diagonal(weights, 0.0)

    x = np.array(classical_mds(dm, d).points if init is None else init, dtype=float)
    if x.shape != (n, d):
        raise InvalidInputError(f"init shape {x.shape}, expected ({n}, {d})")

    if weights is None:
        v_pinv = None
    else:
        v = np.diag(weights.sum(axis=1)) - weights
        v_pinv = np.linalg.pinv(v)

    def _stress(xx):
        diff = xx[:, None, :] - xx[None, :, :]
        dx = np.sqrt((diff * diff).sum(axis=2))
        w = 1.0 if weights is None else weights
        return 0.5 * float((w * (dm - dx) ** 2).sum())

    prev = _stress(x)
    for _ in range(iters):
        diff = x[:, None, :] - x[None, :, :]
        dx = np.sqrt((diff * diff).sum(axis=2))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dx > 0.0, dm / np.where(dx > 0.0, dx, 1.0), 0.0)
        if weights is not None:
            ratio = weights * ratio
        b = -ratio
        np.fill_diagonal(b, 0.0)
        np.fill_diagonal(b, -b.sum(axis=1))
        if weights is None:
            x_new = (b @ x) / n
        else:
            x_new = v_pinv @ (b @ x)
        cur = _stress(x_new)
        if cur > prev + 1e-9 * max(prev, 1.0):
            # majorization guarantees non-increase; numerical noise only
            break
        x = x_new
        if prev - cur <= tol * max(prev, 1.0):
            prev = cur
            break
        prev = cur
    return PointCloud(points=x)


def laplacian_eigenmaps(graph: KnnGraph, d: int) -> PointCloud:
    """Embedding from the lowest non-trivial random-walk Laplacian modes.

    Coordinates are eigenvectors 2..d+1 of I - D^-1 A on the
    symmetrized graph.  The graph must be connected.
    """
    return PointCloud(points=eigenmap_coords(graph.symmetrized_adjacency(), d))


def eigenmap_coords(adjacency: np.ndarray, d: int) -> np.ndarray:
    """Eigenmap coordinates of an undirected 0/1 adjacency matrix."""
    if d < 1:
        raise InvalidParameterError(f"need d >= 1, got {d}")
    adj = np.asarray(adjacency, dtype=float)
    n = adj.shape[0]
    if d + 1 > n:
        raise InvalidParameterError(f"need d + 1 <= n, got d={d}, n={n}")
    comp = connected_components(adj)
    if comp.max() > 0:
        sizes = np.bincount(comp)
        raise StructuralError(
            f"graph has {len(sizes)} connected components (sizes {sizes.tolist()}); "
            "eigenmap embedding needs a connected graph"
        )
    deg = adj.sum(axis=1)
    if deg.min() <= 0.0:
        raise DegenerateInputError("graph has an isolated vertex")
    # random-walk eigenvectors via the symmetric normalized Laplacian
    inv_sqrt = 1.0 / np.sqrt(deg)
    lsym = np.eye(n) - inv_sqrt[:, None] * adj * inv_sqrt[None, :]
    evals, evecs = scipy.linalg.eigh(lsym, subset_by_index=(0, d))
    order = np.argsort(evals)
    evecs = evecs[:, order]
    coords = inv_sqrt[:, None] * evecs[:, 1 : d + 1]
    return _fix_column_signs(coords)

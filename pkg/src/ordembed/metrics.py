"""Error metrics for reconstructed embeddings.

Two views of quality: a combinatorial one (how far the kNN adjacency of
the reconstruction is from the original) and a geometric one (residual
after the best similarity transform onto the reference).
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, InvalidInputError


def _as_adjacency(a) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"adjacency must be square, got shape {m.shape}")
    return m


def a_error(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference of two n x n adjacency matrices.

    For 0/1 matrices this is the fraction of disagreeing entries over
    all n^2 entries, so it lives in [0, 1].
    """
    ma, mb = _as_adjacency(a), _as_adjacency(b)
    if ma.shape != mb.shape:
        raise InvalidInputError(f"shape mismatch: {ma.shape} vs {mb.shape}")
    n = ma.shape[0]
    return float(np.abs(ma - mb).sum() / (n * n))


def misplaced_edges(a: np.ndarray, b: np.ndarray) -> int:
    """Number of entries where two adjacency matrices disagree."""
    ma, mb = _as_adjacency(a), _as_adjacency(b)
    if ma.shape != mb.shape:
        raise InvalidInputError(f"shape mismatch: {ma.shape} vs {mb.shape}")
    return int(np.count_nonzero(ma - mb))


def misplaced_edges_scaled(a: np.ndarray, b: np.ndarray, k: int) -> float:
    """Misplaced-edge count rescaled by n/k.

    Divides out the k-linear growth of edge count so runs with
    different neighbour budgets are comparable.
    """
    n = _as_adjacency(a).shape[0]
    return float(n / k) * misplaced_edges(a, b)


def similarity_align(
    reference: np.ndarray, candidate: np.ndarray
) -> tuple[np.ndarray, float, np.ndarray]:
    """Best similarity transform of candidate onto reference.

    Minimises ``||Xc - s * Yc @ Q||_F`` over orthogonal Q (reflections
    allowed) and scale s > 0, after centring both point sets.  Returns
    ``(Q, s, t)`` such that ``candidate @ Q * s + t`` approximates the
    reference.
    """
    x = np.asarray(reference, dtype=float)
    y = np.asarray(candidate, dtype=float)
    if x.shape != y.shape:
        raise InvalidInputError(f"shape mismatch: {x.shape} vs {y.shape}")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    norm_x = np.linalg.norm(xc)
    norm_y = np.linalg.norm(yc)
    if norm_x == 0.0:
        raise DegenerateInputError("reference cloud has zero spread")
    if norm_y == 0.0:
        raise DegenerateInputError("candidate cloud has zero spread")
    u, s, vt = np.linalg.svd(yc.T @ xc)
    q = u @ vt
    scale = s.sum() / (norm_y**2)
    t = x.mean(axis=0) - scale * (y.mean(axis=0) @ q)
    return q, float(scale), t


def procrustes_error(reference: np.ndarray, candidate: np.ndarray) -> float:
    """Standardised residual after the best similarity transform.

    The minimised squared misfit divided by the centred sum of squares
    of the reference; 0 means the candidate is an exact similarity copy
    of the reference, and the value never exceeds 1.
    """
    x = np.asarray(reference, dtype=float)
    y = np.asarray(candidate, dtype=float)
    if x.shape != y.shape:
        raise InvalidInputError(f"shape mismatch: {x.shape} vs {y.shape}")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    norm_x = np.linalg.norm(xc)
    norm_y = np.linalg.norm(yc)
    if norm_x == 0.0:
        raise DegenerateInputError("reference cloud has zero spread")
    if norm_y == 0.0:
        return 1.0  # candidate collapsed to a point: full misfit
    trace = np.linalg.svd(yc.T @ xc, compute_uv=False).sum()
    value = 1.0 - (trace / (norm_x * norm_y)) ** 2
    # cancellation can push the value a hair outside [0, 1]
    return float(min(max(value, 0.0), 1.0))

"""Randomized generic-rigidity tests for graphs in R^d.

Whether a patch admits a unique embedding (up to similarity) is a
property of its graph alone, for almost every configuration.  Both
tests therefore evaluate ranks at random configurations: the rigidity
matrix rank decides local (infinitesimal) rigidity, and the rank of a
random equilibrium stress matrix decides global rigidity.  Verdicts
are taken by majority over independent trials so a single unlucky
configuration cannot flip the answer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError, InvalidParameterError

RANK_TOL_FACTOR = 1e-10
DEFAULT_TRIALS = 3


@dataclass(frozen=True)
class RigidityReport:
    """Outcome of the combined rigidity test on one graph."""

    locally_rigid: bool
    globally_rigid: bool
    rigidity_rank: int
    stress_rank: int
    trials: int


def _normalize_edges(edges, n: int) -> np.ndarray:
    """Validate and canonicalise an edge list to unique sorted pairs."""
    e = np.asarray(edges, dtype=np.int64)
    if e.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    if e.ndim != 2 or e.shape[1] != 2:
        raise InvalidInputError(f"edges must be (m, 2), got shape {e.shape}")
    if e.min() < 0 or e.max() >= n:
        raise InvalidInputError("edge endpoint out of range")
    if np.any(e[:, 0] == e[:, 1]):
        raise InvalidInputError("self-loop in edge list")
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    return np.unique(np.column_stack([lo, hi]), axis=0)


def rigidity_matrix(edges: np.ndarray, config: np.ndarray) -> sp.csr_matrix:
    """Sparse m x (d n) rigidity matrix at a given configuration.

    Row (i, j) carries p_i - p_j in block i and its negation in block j.
    """
    n, d = config.shape
    m = edges.shape[0]
    diff = config[edges[:, 0]] - config[edges[:, 1]]
    rows = np.repeat(np.arange(m), 2 * d)
    cols = np.concatenate(
        [
            (edges[:, 0, None] * d + np.arange(d)).reshape(m, d),
            (edges[:, 1, None] * d + np.arange(d)).reshape(m, d),
        ],
        axis=1,
    ).ravel()
    data = np.concatenate([diff, -diff], axis=1).ravel()
    return sp.csr_matrix((data, (rows, cols)), shape=(m, d * n))


def _sym_rank(eigvals: np.ndarray, dim_scale: int) -> int:
    """Rank from symmetric-matrix eigenvalues with relative tolerance."""
    mags = np.abs(eigvals)
    top = mags.max(initial=0.0)
    if top == 0.0:
        return 0
    return int(np.count_nonzero(mags > dim_scale * top * RANK_TOL_FACTOR))


def _matrix_rank_and_colbasis(r: sp.csr_matrix, want_basis: bool):
    """Numerical rank of r, optionally with an orthonormal column basis.

    Uses a thin SVD of the densified matrix; a Gram-matrix shortcut
    would square the condition number and blur exactly the near-zero
    singular values the rank tolerance has to resolve.
    """
    m, dn = r.shape
    if m == 0 or dn == 0:
        return 0, None
    u, svals, _ = np.linalg.svd(r.toarray(), full_matrices=False)
    top = svals.max(initial=0.0)
    if top == 0.0:
        return 0, None
    tol = max(m, dn) * top * RANK_TOL_FACTOR
    rank = int(np.count_nonzero(svals > tol))
    return rank, (u[:, :rank] if want_basis else None)


def _random_config(rng, n: int, d: int) -> np.ndarray:
    return rng.uniform(size=(n, d))


def _decided(votes: list[bool], trials: int) -> bool:
    """True once the votes so far already fix the majority verdict."""
    done = len(votes)
    if done >= trials:
        return True
    return votes.count(votes[0]) == done and done > trials / 2


def _is_complete(m: int, n: int) -> bool:
    return m == n * (n - 1) // 2


def local_rigidity(
    edges, n: int, d: int, seed: int = 0, trials: int = DEFAULT_TRIALS
) -> tuple[bool, int]:
    """Generic local rigidity in R^d via rigidity-matrix rank.

    Returns (verdict, rank) where the verdict is a majority over
    independent random configurations and the rank is the largest one
    observed.  Graphs on at most d vertices are degenerate; they are
    reported rigid exactly when complete.
    """
    if d < 1:
        raise InvalidParameterError(f"need d >= 1, got {d}")
    if n < 2:
        raise InvalidParameterError(f"need n >= 2, got {n}")
    e = _normalize_edges(edges, n)
    rng = np.random.default_rng(seed)
    if n <= d:
        r = rigidity_matrix(e, _random_config(rng, n, d))
        rank, _ = _matrix_rank_and_colbasis(r, want_basis=False)
        return _is_complete(e.shape[0], n), rank
    target = d * n - d * (d + 1) // 2
    votes: list[bool] = []
    best_rank = 0
    for _ in range(trials):
        r = rigidity_matrix(e, _random_config(rng, n, d))
        rank, _ = _matrix_rank_and_colbasis(r, want_basis=False)
        best_rank = max(best_rank, rank)
        votes.append(rank == target)
        if _decided(votes, trials):
            break
    verdict = votes.count(True) > len(votes) / 2
    return verdict, best_rank


def _stress_matrix(edges: np.ndarray, weights: np.ndarray, n: int) -> np.ndarray:
    omega = np.zeros((n, n))
    i, j = edges[:, 0], edges[:, 1]
    omega[i, j] = -weights
    omega[j, i] = -weights
    diag = np.bincount(i, weights=weights, minlength=n)
    diag += np.bincount(j, weights=weights, minlength=n)
    omega[np.arange(n), np.arange(n)] = diag
    return omega


def global_rigidity(
    edges, n: int, d: int, seed: int = 0, trials: int = DEFAULT_TRIALS
) -> RigidityReport:
    """Generic global rigidity in R^d via the stress-matrix rank.

    A locally rigid graph is globally rigid exactly when a random
    equilibrium stress has a stress matrix of rank n - (d + 1).
    Complete graphs on at most d + 1 vertices are simplices and are
    globally rigid without any stress test.
    """
    if d < 1:
        raise InvalidParameterError(f"need d >= 1, got {d}")
    if n < 2:
        raise InvalidParameterError(f"need n >= 2, got {n}")
    e = _normalize_edges(edges, n)
    m = e.shape[0]
    rng = np.random.default_rng(seed)

    if n <= d:
        r = rigidity_matrix(e, _random_config(rng, n, d))
        rank, _ = _matrix_rank_and_colbasis(r, want_basis=False)
        complete = _is_complete(m, n)
        return RigidityReport(complete, complete, rank, 0, trials=1)
    if n == d + 1 and _is_complete(m, n):
        r = rigidity_matrix(e, _random_config(rng, n, d))
        rank, _ = _matrix_rank_and_colbasis(r, want_basis=False)
        return RigidityReport(True, True, rank, 0, trials=1)

    local_target = d * n - d * (d + 1) // 2
    stress_target = n - (d + 1)
    local_votes: list[bool] = []
    global_votes: list[bool] = []
    best_rank, best_stress_rank = 0, 0
    for _ in range(trials):
        config = _random_config(rng, n, d)
        r = rigidity_matrix(e, config)
        rank, colbasis = _matrix_rank_and_colbasis(r, want_basis=True)
        best_rank = max(best_rank, rank)
        local_ok = rank == local_target
        local_votes.append(local_ok)
        if not local_ok or m - rank == 0:
            # not rigid, or no redundancy hence only the zero stress
            global_votes.append(False)
        else:
            w0 = rng.normal(size=m)
            w = w0 - colbasis @ (colbasis.T @ w0)
            omega = _stress_matrix(e, w, n)
            stress_rank = _sym_rank(np.linalg.eigvalsh(omega), n)
            best_stress_rank = max(best_stress_rank, stress_rank)
            global_votes.append(stress_rank == stress_target)
        if _decided(local_votes, trials) and _decided(global_votes, trials):
            break
    ran = len(local_votes)
    return RigidityReport(
        locally_rigid=local_votes.count(True) > ran / 2,
        globally_rigid=global_votes.count(True) > ran / 2,
        rigidity_rank=best_rank,
        stress_rank=best_stress_rank,
        trials=ran,
    )

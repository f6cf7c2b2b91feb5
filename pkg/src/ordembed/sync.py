"""Stitching per-patch embeddings into one global map.

Each patch arrives in its own frame: an unknown similarity transform
(scale, orthogonal map, translation) away from the truth.  Shared
vertices between overlapping patches expose those unknowns pairwise,
and three global synchronization passes remove them in order:

1. scale: the leading eigenvector of the degree-normalized pairwise
   distance-ratio matrix gives one scale per patch (exact on any
   connected patch graph, since the normalized ratio matrix is a
   diagonal conjugation of a row-stochastic matrix);
2. orthogonal maps: pairwise alignments of shared vertices fill a
   block matrix whose top eigenspace stacks the per-patch maps, read
   off block by block through polar factors;
3. translations: a per-dimension least-squares over patch-internal
   edge displacements, solved through one bordered Laplacian system
   that pins the mean to zero.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg

from .cloud import KnnGraph, PointCloud, connected_components, pairwise_sq_dists
from .errors import (
    DegenerateAlignmentError,
    InvalidInputError,
    InvalidParameterError,
    NumericalError,
    StructuralError,
)
from .loe import LoeConfig, OrdinalProblem, loe_embed, loe_energy, spectral_init
from .patches import PatchSet, decompose

POWER_TOL = 1e-12
POWER_MAX_ITERS = 10_000


@dataclass
class LocalEmbeddings:
    """Per-patch coordinate blocks, row-aligned with patch vertex lists."""

    pset: PatchSet
    coords: list[np.ndarray]

    def __post_init__(self):
        if len(self.coords) != len(self.pset.patches):
            raise InvalidInputError("one coordinate block per patch required")
        self.coords = [np.asarray(c, dtype=float) for c in self.coords]
        for p, c in zip(self.pset.patches, self.coords):
            if c.shape != (p.size, self.pset.d):
                raise InvalidInputError(
                    f"patch {p.id} coords shape {c.shape}, "
                    f"expected ({p.size}, {self.pset.d})"
                )
            if not np.isfinite(c).all():
                raise InvalidInputError(f"patch {p.id} coords contain non-finite values")


@dataclass
class SyncSolution:
    """Global embedding plus the per-patch transforms that produced it."""

    cloud: PointCloud
    pset: PatchSet
    scales: np.ndarray
    rotations: np.ndarray
    translation_residual: float
    patch_energies: Optional[list[float]] = None


def _shared_local_rows(pset: PatchSet, i: int, j: int):
    shared = pset.overlap(i, j)
    li = np.searchsorted(pset.patches[i].vertices, shared)
    lj = np.searchsorted(pset.patches[j].vertices, shared)
    return shared, li, lj


def _pairs_connect(m: int, pairs) -> bool:
    """True when the undirected pair list spans all m nodes."""
    if m <= 1:
        return True
    adj: list[list[int]] = [[] for _ in range(m)]
    for i, j in pairs:
        adj[i].append(j)
        adj[j].append(i)
    seen = np.zeros(m, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        for nxt in adj[stack.pop()]:
            if not seen[nxt]:
                seen[nxt] = True
                stack.append(nxt)
    return bool(seen.all())


def scale_sync(local: LocalEmbeddings) -> np.ndarray:
    """One positive scale per patch from median pairwise-distance ratios.

    The ratio matrix has entry (i, j) = median over shared pairs of
    dist_i / dist_j for i < j, the reciprocal mirrored below the
    diagonal, ones on the diagonal, zeros elsewhere.  Each row is
    divided by its number of positive entries before the power
    iteration: the normalized matrix is diagonally similar to a
    row-stochastic one, so on consistent inputs its leading
    eigenvector is the scale vector itself for any connected patch
    graph, not only regular ones.  Pairs left with fewer than 3
    usable ratios by coincident points are dropped; the remaining
    ratio graph must stay connected.  The geometric-mean gauge is
    fixed to one, and dividing each patch by its scale equalizes the
    frames.
    """
    pset = local.pset
    m = len(pset.patches)
    if m == 1:
        return np.ones(1)
    lam = np.eye(m)
    kept = []
    for i, j in pset.edges:
        shared, li, lj = _shared_local_rows(pset, i, j)
        zi = local.coords[i][li]
        zj = local.coords[j][lj]
        iu = np.triu_indices(shared.size, 1)
        di = np.sqrt(pairwise_sq_dists(zi)[iu])
        dj = np.sqrt(pairwise_sq_dists(zj)[iu])
        ok = (di > 0.0) & (dj > 0.0)
        if int(ok.sum()) < 3:
            # coincident local points starve the pair of ratios; drop
            # the pair and let the remaining ratio graph carry it
            continue
        lam[i, j] = float(np.median(di[ok] / dj[ok]))
        lam[j, i] = 1.0 / lam[i, j]
        kept.append((i, j))
    if not _pairs_connect(m, kept):
        raise DegenerateAlignmentError(
            "scale ratio graph is disconnected after dropping pairs with "
            "fewer than 3 usable shared distances"
        )
    lam = lam / (lam > 0.0).sum(axis=1, keepdims=True)
    v = np.full(m, 1.0 / np.sqrt(m))
    for _ in range(POWER_MAX_ITERS):
        w = lam @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            raise NumericalError("scale ratio matrix annihilated the iterate")
        w /= norm
        if float(np.linalg.norm(w - v)) < POWER_TOL:
            v = w
            break
        v = w
    v = np.abs(v)
    if (v <= 0.0).any():
        raise NumericalError("scale eigenvector has a zero entry")
    return v / np.exp(np.log(v).mean())


def pairwise_align(target: np.ndarray, source: np.ndarray) -> np.ndarray:
    """Orthogonal map Q (reflections allowed) with source @ Q ~ target.

    Both inputs list the same shared vertices row for row; centering
    removes the translations first.  Raises when the shared points are
    affinely degenerate, because then the fit does not pin down Q.
    """
    a = target - target.mean(axis=0)
    b = source - source.mean(axis=0)
    u, svals, vt = np.linalg.svd(b.T @ a)
    top = svals.max(initial=0.0)
    if top <= 0.0 or svals.min() <= 1e-12 * top:
        raise DegenerateAlignmentError(
            "shared vertices are affinely degenerate; orthogonal alignment "
            "is underdetermined"
        )
    return u @ vt


def rotation_sync(local: LocalEmbeddings) -> np.ndarray:
    """Per-patch orthogonal maps from the top block-eigenspace.

    Pairwise alignments fill the off-diagonal blocks of a symmetric
    matrix, normalized by patch-graph degrees; the top d eigenvectors
    stack the per-patch maps up to one common right factor, removed by
    expressing every block-polar relative to patch 0.  Edges whose
    shared vertices are affinely degenerate are dropped; the surviving
    patch graph must stay connected.
    """
    pset = local.pset
    m, d = len(pset.patches), pset.d
    if m == 1:
        return np.eye(d)[None, :, :]
    aligned = []
    for i, j in pset.edges:
        _, li, lj = _shared_local_rows(pset, i, j)
        try:
            p_ij = pairwise_align(local.coords[i][li], local.coords[j][lj])
        except DegenerateAlignmentError:
            # affinely degenerate overlap: drop the edge, keep the rest
            continue
        aligned.append((i, j, p_ij))
    deg = np.zeros(m)
    for i, j, _ in aligned:
        deg[i] += 1.0
        deg[j] += 1.0
    if (deg == 0.0).any():
        raise StructuralError("a patch has no overlap partners")
    if not _pairs_connect(m, [(i, j) for i, j, _ in aligned]):
        raise StructuralError(
            "patch graph is disconnected after dropping degenerate overlaps"
        )
    big = np.zeros((m * d, m * d))
    for i, j, p_ij in aligned:
        block = p_ij.T / np.sqrt(deg[i] * deg[j])
        big[i * d : (i + 1) * d, j * d : (j + 1) * d] = block
        big[j * d : (j + 1) * d, i * d : (i + 1) * d] = block.T
    _, vecs = np.linalg.eigh(big)
    w = vecs[:, -d:]
    rotations = np.empty((m, d, d))
    for i in range(m):
        block = w[i * d : (i + 1) * d, :]
        u, svals, vt = np.linalg.svd(block)
        if svals.max(initial=0.0) <= 0.0:
            raise DegenerateAlignmentError(f"patch {i} has a vanishing sync block")
        rotations[i] = u @ vt
    gauge = rotations[0].T.copy()  # .T alone would alias the buffer below
    for i in range(m):
        rotations[i] = rotations[i] @ gauge
    return rotations


def translation_sync(local: LocalEmbeddings, adjacency: np.ndarray) -> tuple[np.ndarray, float]:
    """Global coordinates from patch-internal edge displacements.

    Every graph edge interior to a patch contributes the constraint
    x_u - x_v = z[u] - z[v] in that patch's (already scaled and
    rotated) frame.  The normal equations are one graph Laplacian
    system per dimension; a bordered row pins the mean so the solve is
    nonsingular on a connected constraint graph.
    """
    pset = local.pset
    n, d = pset.n, pset.d
    src_list, dst_list, target_list = [], [], []
    for p, z in zip(pset.patches, local.coords):
        verts = p.vertices
        sub = adjacency[np.ix_(verts, verts)]
        li, lj = np.nonzero(np.triu(sub, 1))
        if li.size == 0:
            continue
        src_list.append(verts[li])
        dst_list.append(verts[lj])
        target_list.append(z[li] - z[lj])
    if not src_list:
        raise StructuralError("no patch-internal edges; translations are free")
    src = np.concatenate(src_list)
    dst = np.concatenate(dst_list)
    targets = np.vstack(target_list)

    union = np.zeros((n, n), dtype=np.uint8)
    union[src, dst] = 1
    union[dst, src] = 1
    comp = connected_components(union)
    if int(comp.max()) > 0:
        raise StructuralError(
            "patch-internal edges do not connect all vertices; "
            "translations cannot be synchronized"
        )

    counts = np.bincount(src, minlength=n) + np.bincount(dst, minlength=n)
    ones = np.ones(src.size)
    lap = sp.coo_matrix(
        (
            np.concatenate([-ones, -ones, counts.astype(float)]),
            (
                np.concatenate([src, dst, np.arange(n)]),
                np.concatenate([dst, src, np.arange(n)]),
            ),
        ),
        shape=(n, n),
    )
    border = sp.coo_matrix((np.ones(n), (np.arange(n), np.zeros(n, dtype=int))),
                           shape=(n, 1))
    kkt = sp.bmat([[lap, border], [border.T, None]], format="csc")
    rhs = np.zeros((n + 1, d))
    np.add.at(rhs, src, targets)
    np.add.at(rhs, dst, -targets)
    solution = sp.linalg.splu(kkt).solve(rhs)
    x = solution[:n]
    x = x - x.mean(axis=0)
    gaps = (x[src] - x[dst]) - targets
    residual = float(np.sqrt((gaps ** 2).sum() / max(gaps.size, 1)))
    return x, residual


def synchronize(local: LocalEmbeddings, adjacency: np.ndarray,
                skip_scale_sync: bool = False) -> SyncSolution:
    """Run the three synchronization passes on given patch embeddings."""
    pset = local.pset
    scales = np.ones(len(pset.patches)) if skip_scale_sync else scale_sync(local)
    scaled = LocalEmbeddings(
        pset=pset,
        coords=[c / s for c, s in zip(local.coords, scales)],
    )
    rotations = rotation_sync(scaled)
    rotated = LocalEmbeddings(
        pset=pset,
        coords=[c @ r for c, r in zip(scaled.coords, rotations)],
    )
    x, residual = translation_sync(rotated, adjacency)
    return SyncSolution(
        cloud=PointCloud(points=x),
        pset=pset,
        scales=scales,
        rotations=rotations,
        translation_residual=residual,
    )


@dataclass
class AsapConfig:
    """Settings for the divide-and-conquer pipeline."""

    max_patch_size: int = 400
    delta: float = 1.0
    loe_iters: int = 150
    loe_method: str = "bfgs"
    init: str = "spectral"
    seed: int = 0
    threads: int = 1
    skip_scale_sync: bool = False
    skip_rigidity: bool = False

    def __post_init__(self):
        if self.threads < 1:
            raise InvalidParameterError(f"need threads >= 1, got {self.threads}")
        if self.init not in ("spectral", "random"):
            raise InvalidParameterError(
                f"init must be 'spectral' or 'random', got {self.init!r}"
            )


PatchEmbedder = Callable[[KnnGraph, np.ndarray, int, int], np.ndarray]


def _loe_patch_embedder(config: AsapConfig, sym_adj: np.ndarray) -> PatchEmbedder:
    def embed(graph: KnnGraph, verts: np.ndarray, d: int, seed: int) -> np.ndarray:
        problem = OrdinalProblem.from_subgraph(graph, verts, d, delta=config.delta)
        init = None
        if config.init == "spectral":
            sub_adj = sym_adj[np.ix_(verts, verts)]
            init = spectral_init(sub_adj, d, config.delta, seed)
        loe_cfg = LoeConfig(
            max_iters=config.loe_iters,
            method=config.loe_method,
            init=init,
            seed=seed,
        )
        try:
            result = loe_embed(problem, loe_cfg)
        except NumericalError:
            # one retry from a fresh random start before giving up
            retry = LoeConfig(
                max_iters=config.loe_iters, method=config.loe_method, seed=seed + 1
            )
            result = loe_embed(problem, retry)
        return result.cloud.points

    return embed


def asap_embed(graph: KnnGraph, d: int, config: AsapConfig | None = None,
               patch_embedder: Optional[PatchEmbedder] = None) -> SyncSolution:
    """Divide, embed, and synchronize a kNN graph into global coordinates.

    The graph is decomposed into overlapping patches, each patch is
    embedded on its own (by default: a spectral start polished by the
    ordinal hinge optimizer), and the per-patch frames are merged by
    the three synchronization passes.  ``patch_embedder`` swaps in a
    different per-patch method; it receives (graph, vertices, d, seed)
    and must return one row per patch vertex in ascending vertex order.
    """
    config = config or AsapConfig()
    pset = decompose(graph, d, config.max_patch_size, seed=config.seed,
                     prune=not config.skip_rigidity)
    sym_adj = graph.symmetrized_adjacency()
    embedder = patch_embedder or _loe_patch_embedder(config, sym_adj)

    def run_patch(patch):
        seed = config.seed * 1_000_003 + patch.id
        coords = embedder(graph, patch.vertices, d, seed)
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (patch.size, d):
            raise InvalidInputError(
                f"patch embedder returned shape {coords.shape} for patch "
                f"{patch.id}, expected ({patch.size}, {d})"
            )
        problem = OrdinalProblem.from_subgraph(graph, patch.vertices, d,
                                               delta=config.delta)
        return coords, float(loe_energy(problem, coords))

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(run_patch, pset.patches))
    else:
        outcomes = [run_patch(p) for p in pset.patches]

    local = LocalEmbeddings(pset=pset, coords=[c for c, _ in outcomes])
    solution = synchronize(local, sym_adj, skip_scale_sync=config.skip_scale_sync)
    solution.patch_energies = [e for _, e in outcomes]
    if not np.isfinite(solution.cloud.points).all():
        raise NumericalError("synchronized coordinates are not finite")
    return solution

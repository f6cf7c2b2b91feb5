"""Ordinal embedding by hinge-penalised margin violations.

A directed kNN graph pins down, for every anchor a, that each
neighbour b must sit closer to a than every non-neighbour c.  The
embedder turns those comparisons into the energy

    sum over (a, b, a, c) of max(0, D(a, b) + delta - D(a, c))^2

with D the squared Euclidean distance (a plain-distance mode exists
behind a flag) and delta a fixed margin that also pins the overall
scale.  Constraints are never materialised as quadruple lists for
graph-shaped problems; energy and gradient stream over anchors in
fixed-size chunks, costing O(n * k * (n - k)) per evaluation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .cloud import KnnGraph, PointCloud, pairwise_sq_dists
from .errors import InvalidInputError, InvalidParameterError, NumericalError

ARMIJO_C = 1e-4
MAX_HALVINGS = 60
CHUNK_TARGET = 2_000_000  # hinge-tensor elements per anchor chunk
MM_SURROGATE_CAP = 20_000_000  # constraint count above which MM falls back


@dataclass(frozen=True)
class OrdinalProblem:
    """A set of ordinal distance comparisons over n points in R^d.

    Exactly one of ``neighbors`` and ``quadruples`` is set.  The
    anchored form stores per-anchor neighbour lists (-1 padded) and
    implies the constraint (a, b, a, c) for every neighbour b and
    non-neighbour c of each anchor a.  The explicit form lists rows
    (i, j, k, l) meaning pair (i, j) must be closer than pair (k, l).
    """

    n: int
    d: int
    delta: float = 1.0
    squared: bool = True
    neighbors: Optional[np.ndarray] = None
    quadruples: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise InvalidParameterError(f"need n >= 1, d >= 1, got {self.n}, {self.d}")
        if self.delta <= 0.0:
            raise InvalidParameterError(f"margin delta must be > 0, got {self.delta}")
        if (self.neighbors is None) == (self.quadruples is None):
            raise InvalidInputError("exactly one of neighbors/quadruples must be set")
        if self.neighbors is not None:
            nb = np.asarray(self.neighbors, dtype=np.int64)
            if nb.ndim != 2 or nb.shape[0] != self.n:
                raise InvalidInputError(f"neighbors must be (n, kmax), got {nb.shape}")
            if nb.max(initial=-1) >= self.n:
                raise InvalidInputError("neighbor id out of range")
            object.__setattr__(self, "neighbors", nb)
        else:
            q = np.asarray(self.quadruples, dtype=np.int64)
            if q.ndim != 2 or q.shape[1] != 4:
                raise InvalidInputError(f"quadruples must be (m, 4), got {q.shape}")
            if q.size and (q.min() < 0 or q.max() >= self.n):
                raise InvalidInputError("quadruple id out of range")
            object.__setattr__(self, "quadruples", q)

    @classmethod
    def from_graph(cls, graph: KnnGraph, d: int, delta: float = 1.0,
                   squared: bool = True) -> "OrdinalProblem":
        """All comparisons implied by a directed kNN graph."""
        return cls(n=graph.n, d=d, delta=delta, squared=squared,
                   neighbors=graph.out_neighbors.copy())

    @classmethod
    def from_subgraph(cls, graph: KnnGraph, vertices: np.ndarray, d: int,
                      delta: float = 1.0, squared: bool = True) -> "OrdinalProblem":
        """Comparisons of the subgraph induced on ``vertices``.

        Vertex ids are relabelled 0..m-1 in ascending original order.
        Induced subgraphs of kNN graphs have varying out-degrees, so
        rows are -1 padded.
        """
        verts = np.unique(np.asarray(vertices, dtype=np.int64))
        local = {int(v): i for i, v in enumerate(verts)}
        rows = []
        for v in verts:
            row = [local[int(b)] for b in graph.out_neighbors[v] if int(b) in local]
            rows.append(row)
        kmax = max((len(r) for r in rows), default=0)
        nb = np.full((len(verts), max(kmax, 1)), -1, dtype=np.int64)
        for i, row in enumerate(rows):
            nb[i, : len(row)] = row
        return cls(n=len(verts), d=d, delta=delta, squared=squared, neighbors=nb)

    @classmethod
    def from_quadruples(cls, n: int, d: int, quadruples, delta: float = 1.0,
                        squared: bool = True) -> "OrdinalProblem":
        return cls(n=n, d=d, delta=delta, squared=squared,
                   quadruples=np.asarray(quadruples, dtype=np.int64))

    def constraint_count(self) -> int:
        if self.quadruples is not None:
            return int(self.quadruples.shape[0])
        deg = (self.neighbors >= 0).sum(axis=1)
        return int((deg * (self.n - 1 - deg)).sum())

    def iter_quadruples(self) -> Iterator[tuple[int, int, int, int]]:
        """Stream every constraint as an explicit (i, j, k, l) row."""
        if self.quadruples is not None:
            for row in self.quadruples:
                yield tuple(int(v) for v in row)
            return
        for a in range(self.n):
            nbrs = [int(b) for b in self.neighbors[a] if b >= 0]
            nbr_set = set(nbrs)
            for b in nbrs:
                for c in range(self.n):
                    if c != a and c not in nbr_set:
                        yield (a, b, a, c)


@dataclass
class LoeConfig:
    """Driver settings for :func:`loe_embed`.

    ``delta`` is the margin used when callers build problems through
    this config; an already-built problem keeps its own margin.
    """

    max_iters: int = 100
    method: str = "bfgs"
    init: Optional[np.ndarray] = None
    seed: int = 0
    gtol: float = 1e-8
    delta: float = 1.0

    def __post_init__(self):
        if self.method not in ("bfgs", "mm"):
            raise InvalidParameterError(f"method must be 'bfgs' or 'mm', got {self.method!r}")
        if self.max_iters < 0:
            raise InvalidParameterError(f"need max_iters >= 0, got {self.max_iters}")
        if self.gtol < 0.0:
            raise InvalidParameterError(f"need gtol >= 0, got {self.gtol}")


@dataclass
class LoeResult:
    cloud: PointCloud
    energy: float
    n_iters: int
    converged: bool
    line_search_failed: bool = False
    energy_trace: list[float] = field(default_factory=list)


def _chunk_size(n: int, kmax: int) -> int:
    return max(1, int(CHUNK_TARGET // max(n * max(kmax, 1), 1)))


def _anchored_pass(problem: OrdinalProblem, x: np.ndarray, want_grad: bool,
                   margins_out: np.ndarray | None = None,
                   margins_ref: np.ndarray | None = None):
    """One streamed pass over all anchored constraints.

    Returns (value, grad).  With ``margins_ref`` set, the value is the
    majorizer sum((m - min(m_ref, 0))^2) instead of the hinge energy;
    ``margins_out`` collects raw margins in stream order.
    """
    n, d = problem.n, problem.d
    nb = problem.neighbors
    kmax = nb.shape[1]
    delta = problem.delta
    value = 0.0
    grad = np.zeros((n, d)) if want_grad else None
    pos = 0
    chunk = _chunk_size(n, kmax)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        anchors = np.arange(start, stop)
        xa = x[anchors]
        nbr = nb[start:stop]
        valid = nbr >= 0
        nbr_safe = np.where(valid, nbr, 0)
        xb = x[nbr_safe]
        if problem.squared:
            d_nbr = ((xa[:, None, :] - xb) ** 2).sum(axis=2)
            d_row = pairwise_sq_dists(xa, x)
        else:
            d_nbr = np.sqrt(((xa[:, None, :] - xb) ** 2).sum(axis=2))
            d_row = np.sqrt(pairwise_sq_dists(xa, x))
        non_nbr = np.ones((stop - start, n), dtype=bool)
        non_nbr[np.arange(stop - start), anchors] = False
        vr, vc = np.nonzero(valid)
        non_nbr[vr, nbr[vr, vc]] = False
        # margins of every (a, b, a, c) comparison in this chunk
        t = d_nbr[:, :, None] + delta - d_row[:, None, :]
        live = valid[:, :, None] & non_nbr[:, None, :]
        if margins_out is not None:
            flat = t[live]
            margins_out[pos : pos + flat.size] = flat
        if margins_ref is None:
            h = np.where(live, np.maximum(t, 0.0), 0.0)
            value += float((h * h).sum())
            w = 2.0 * h
        else:
            stored = np.zeros_like(t)
            stored[live] = margins_ref[pos : pos + int(live.sum())]
            shifted = np.where(live, t - np.minimum(stored, 0.0), 0.0)
            value += float((shifted * shifted).sum())
            w = 2.0 * shifted
        pos += int(live.sum())
        if not want_grad:
            continue
        r = w.sum(axis=2)  # per (a, b)
        s = w.sum(axis=1)  # per (a, c)
        if problem.squared:
            # dD/dx carries the factor 2 of the squared distance
            diff_ab = xa[:, None, :] - xb
            grad[anchors] += 2.0 * (
                r.sum(axis=1)[:, None] * xa
                - (r[:, :, None] * xb).sum(axis=1)
                - s.sum(axis=1)[:, None] * xa
                + s @ x
            )
            np.add.at(grad, nbr_safe[valid], (-2.0 * r[:, :, None] * diff_ab)[valid])
            grad += 2.0 * (s.T @ xa)
            grad -= 2.0 * s.sum(axis=0)[:, None] * x
        else:
            inv_nbr = 1.0 / np.maximum(d_nbr, 1e-12)
            inv_row = 1.0 / np.maximum(d_row, 1e-12)
            rb = r * inv_nbr
            sc = s * inv_row
            diff_ab = xa[:, None, :] - xb
            grad[anchors] += (
                rb.sum(axis=1)[:, None] * xa
                - (rb[:, :, None] * xb).sum(axis=1)
                - sc.sum(axis=1)[:, None] * xa
                + sc @ x
            )
            np.add.at(grad, nbr_safe[valid], (-rb[:, :, None] * diff_ab)[valid])
            grad += sc.T @ xa
            grad -= sc.sum(axis=0)[:, None] * x
    return value, grad


def _quadruple_pass(problem: OrdinalProblem, x: np.ndarray, want_grad: bool,
                    margins_out: np.ndarray | None = None,
                    margins_ref: np.ndarray | None = None):
    q = problem.quadruples
    if q.shape[0] == 0:
        return 0.0, (np.zeros_like(x) if want_grad else None)
    i, j, k, l = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    dij = x[i] - x[j]
    dkl = x[k] - x[l]
    if problem.squared:
        near = (dij * dij).sum(axis=1)
        far = (dkl * dkl).sum(axis=1)
    else:
        near = np.linalg.norm(dij, axis=1)
        far = np.linalg.norm(dkl, axis=1)
    t = near + problem.delta - far
    if margins_out is not None:
        margins_out[: t.size] = t
    if margins_ref is None:
        h = np.maximum(t, 0.0)
    else:
        h = t - np.minimum(margins_ref[: t.size], 0.0)
    value = float((h * h).sum())
    if not want_grad:
        return value, None
    w = 2.0 * h
    grad = np.zeros_like(x)
    if problem.squared:
        gij = (2.0 * w)[:, None] * dij
        gkl = (2.0 * w)[:, None] * dkl
    else:
        gij = (w / np.maximum(near, 1e-12))[:, None] * dij
        gkl = (w / np.maximum(far, 1e-12))[:, None] * dkl
    np.add.at(grad, i, gij)
    np.add.at(grad, j, -gij)
    np.add.at(grad, k, -gkl)
    np.add.at(grad, l, gkl)
    return value, grad


def _evaluate(problem, x, want_grad, margins_out=None, margins_ref=None):
    if problem.neighbors is not None:
        return _anchored_pass(problem, x, want_grad, margins_out, margins_ref)
    return _quadruple_pass(problem, x, want_grad, margins_out, margins_ref)


def loe_energy(problem: OrdinalProblem, x: np.ndarray) -> float:
    """Hinge energy of a configuration (lower is better, 0 is feasible)."""
    x = _check_coords(problem, x)
    value, _ = _evaluate(problem, x, want_grad=False)
    return value


def loe_gradient(problem: OrdinalProblem, x: np.ndarray) -> np.ndarray:
    """Gradient of :func:`loe_energy` with respect to the coordinates."""
    x = _check_coords(problem, x)
    _, grad = _evaluate(problem, x, want_grad=True)
    return grad


def _check_coords(problem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.n, problem.d):
        raise InvalidInputError(
            f"coordinates shape {x.shape}, expected ({problem.n}, {problem.d})"
        )
    if not np.isfinite(x).all():
        raise InvalidInputError("coordinates contain non-finite values")
    return x


def _rescale_to_extent(x: np.ndarray, delta: float, rng: np.random.Generator) -> np.ndarray:
    """Scale so the mean pairwise distance is sqrt(delta) * n^(1/d).

    A feasible configuration spaces neighbours about sqrt(delta) apart,
    and n such cells fill a region of that diameter.
    """
    n, d = x.shape
    if n < 2:
        return x
    sample = x if n <= 512 else x[rng.choice(n, 512, replace=False)]
    d2 = pairwise_sq_dists(sample)
    mean_dist = float(np.sqrt(d2[np.triu_indices(sample.shape[0], 1)]).mean())
    target = np.sqrt(delta) * n ** (1.0 / d)
    if mean_dist > 0.0:
        x = x * (target / mean_dist)
    return x


def random_init(problem: OrdinalProblem, seed: int) -> np.ndarray:
    """Standard-normal start scaled to the margin-implied extent."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(problem.n, problem.d))
    return _rescale_to_extent(x, problem.delta, rng)


def spectral_init(graph: KnnGraph | np.ndarray, d: int, delta: float = 1.0,
                  seed: int = 0) -> np.ndarray:
    """Laplacian-eigenmap start for graph-shaped problems.

    Diffusion coordinates unfold the global layout far better than a
    random start, which tends to leave the hinge optimizer in folded
    local minima; the optimizer then only has to repair local order.
    Accepts a kNN graph or a plain undirected adjacency matrix.  Falls
    back to a random configuration when the graph is too small or not
    connected.  Output is scaled like :func:`random_init`.
    """
    from .baselines import eigenmap_coords
    from .errors import OrdembedError

    adj = graph.symmetrized_adjacency() if isinstance(graph, KnnGraph) else graph
    rng = np.random.default_rng(seed)
    try:
        x = eigenmap_coords(adj, d)
    except OrdembedError:
        x = rng.normal(size=(adj.shape[0], d))
    return _rescale_to_extent(x, delta, rng)


def _bfgs(problem, x0, config):
    n_vars = x0.size
    x = x0.ravel().copy()

    def fg(v, want_grad=True):
        value, grad = _evaluate(problem, v.reshape(problem.n, problem.d), want_grad)
        return value, (grad.ravel() if want_grad else None)

    f, g = fg(x)
    best_f, best_x = f, x.copy()
    h = np.eye(n_vars)
    curved = False  # whether h carries at least one curvature update
    prev_step = 1.0 / (1.0 + float(np.linalg.norm(g)))
    trace = [f]
    converged = False
    ls_failed = False
    it = 0
    for it in range(1, config.max_iters + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.gtol:
            converged = True
            it -= 1
            break
        p = -(h @ g)
        slope = float(p @ g)
        if slope >= 0.0:
            h = np.eye(n_vars)
            curved = False
            p = -g
            slope = -float(g @ g)
        # with curvature in h the unit step is the right first guess;
        # on a bare metric reuse the last accepted scale instead of
        # halving down from 1 every time
        step = 1.0 if curved else min(1.0, 4.0 * prev_step)
        fn = None
        for _ in range(MAX_HALVINGS):
            xn = x + step * p
            fn, _ = fg(xn, want_grad=False)
            if np.isfinite(fn) and fn <= f + ARMIJO_C * step * slope:
                break
            step *= 0.5
        else:
            ls_failed = True
            break
        prev_step = step
        _, gn = fg(xn)
        s = xn - x
        y = gn - g
        sy = float(s @ y)
        if sy <= 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            h = np.eye(n_vars)  # curvature failed: restart the metric
            curved = False
        else:
            if not curved:
                h = np.eye(n_vars) * (sy / float(y @ y))
                curved = True
            # H+ = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            rho = 1.0 / sy
            hy = h @ y
            h -= rho * (np.outer(s, hy) + np.outer(hy, s))
            h += (rho * rho * float(y @ hy) + rho) * np.outer(s, s)
        x, f, g = xn, fn, gn
        trace.append(f)
        if f < best_f:
            best_f, best_x = f, x.copy()
    else:
        it = config.max_iters
    if ls_failed:
        warnings.warn("line search stalled; returning best iterate", stacklevel=3)
    return best_x.reshape(problem.n, problem.d), best_f, it, converged, ls_failed, trace


def _mm(problem, x0, config):
    """Majorize-minimize: quadratic upper bound of the hinge at the
    current iterate, decreased by one backtracking gradient sweep.

    The majorizer of max(0, t)^2 at t0 is (t - min(t0, 0))^2; it meets
    the hinge at t0 and dominates it everywhere, so any decrease of the
    surrogate decreases the energy.  Its gradient at the expansion
    point equals the energy gradient.
    """
    x = x0.copy()
    m_count = problem.constraint_count()
    exact = m_count <= MM_SURROGATE_CAP
    margins = np.empty(m_count) if exact else None
    f, g = _evaluate(problem, x, want_grad=True, margins_out=margins)
    best_f, best_x = f, x.copy()
    trace = [f]
    converged = False
    ls_failed = False
    it = 0
    step = 1.0
    for it in range(1, config.max_iters + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.gtol:
            converged = True
            it -= 1
            break
        step = min(step * 2.0, 1e6)  # allow regrowth after cautious steps
        accepted = False
        for _ in range(MAX_HALVINGS):
            xn = x - step * g
            if exact:
                sur, _ = _evaluate(problem, xn, want_grad=False, margins_ref=margins)
            else:
                sur, _ = _evaluate(problem, xn, want_grad=False)
            if np.isfinite(sur) and sur <= f - ARMIJO_C * step * gnorm * gnorm:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            ls_failed = True
            break
        x = xn
        f, g = _evaluate(problem, x, want_grad=True, margins_out=margins)
        trace.append(f)
        if f < best_f:
            best_f, best_x = f, x.copy()
    if ls_failed:
        warnings.warn("majorizer step stalled; returning best iterate", stacklevel=3)
    return best_x, best_f, it, converged, ls_failed, trace


def loe_embed(problem: OrdinalProblem, config: LoeConfig | None = None) -> LoeResult:
    """Minimise the ordinal hinge energy from a random or given start.

    Never raises on optimizer stagnation: the best iterate seen is
    returned with ``line_search_failed`` set instead.
    """
    config = config or LoeConfig()
    if config.init is not None:
        x0 = _check_coords(problem, config.init).copy()
    else:
        x0 = random_init(problem, config.seed)
    if problem.constraint_count() == 0:
        return LoeResult(PointCloud(points=x0), 0.0, 0, True)
    if config.method == "bfgs":
        x, f, iters, conv, lsf, trace = _bfgs(problem, x0, config)
    else:
        x, f, iters, conv, lsf, trace = _mm(problem, x0, config)
    if not np.isfinite(x).all():
        raise NumericalError("optimizer produced non-finite coordinates")
    return LoeResult(PointCloud(points=x), float(f), iters, conv, lsf, trace)

"""Linear-program embedding from kNN ordinal structure.

A kNN graph states, for each vertex, which other vertices fall inside
its neighborhood.  This module casts those statements as linear
constraints on a symmetric distance matrix and per-vertex neighborhood
radii: an edge's distance must fit under the source's radius, a
non-edge's must clear it, distances obey a sampled set of triangle
inequalities, and the radii share a fixed total budget that pins the
overall scale.  Violations are absorbed by nonnegative slacks whose
sum is minimized; coordinates then come from metric MDS on the
recovered distances.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import OptimizeWarning, linprog

from .baselines import stress_mds
from .cloud import KnnGraph, PointCloud
from .errors import InvalidParameterError, SolverError

DEFAULT_MAX_N = 200
TRIPLES_PER_VERTEX = 20
MARGIN_SCALE = 1e-3
AUDIT_TOL = 1e-6


@dataclass(frozen=True)
class LpConfig:
    """Settings for the ordinal distance program.

    ``v_total`` is the radius budget (defaults to n); the strict
    non-edge inequalities carry a margin of MARGIN_SCALE * v_total / n.
    ``solver`` replaces the bundled scipy solver; it receives
    (c, a_ub, b_ub, a_eq, b_eq) and must return the primal vector.
    """

    v_total: float | None = None
    triple_budget: int | None = None
    seed: int = 0
    max_n: int = DEFAULT_MAX_N
    solver: Callable[..., np.ndarray] | None = None

    def __post_init__(self):
        if self.v_total is not None and not self.v_total > 0.0:
            raise InvalidParameterError(
                f"radius budget must be positive, got {self.v_total}"
            )
        if self.triple_budget is not None and self.triple_budget < 0:
            raise InvalidParameterError(
                f"triple budget must be nonnegative, got {self.triple_budget}"
            )
        if self.max_n < 2:
            raise InvalidParameterError(f"max_n must be at least 2, got {self.max_n}")


def _pair_cols(n: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column index of the unordered pair {a, b} in row-major upper order."""
    i = np.minimum(a, b)
    j = np.maximum(a, b)
    return (i * (2 * n - i - 1)) // 2 + (j - i - 1)


def _two_hop_lists(graph: KnnGraph) -> list[list[int]]:
    sym = graph.symmetrized_adjacency()
    nbrs = [np.flatnonzero(sym[i]) for i in range(graph.n)]
    out = []
    for i in range(graph.n):
        reach = set(nbrs[i].tolist())
        for j in nbrs[i]:
            reach.update(nbrs[j].tolist())
        reach.discard(i)
        out.append(sorted(reach))
    return out


def _sample_triples(graph: KnnGraph, budget: int, rng: np.random.Generator):
    """Apex-centered triples (i, j, k), j < k, for D_jk <= D_ij + D_ik.

    Local triples are enumerated round-robin over apexes (each apex
    pairs vertices from its 2-hop neighborhood) so small budgets still
    cover every vertex, then topped up with uniform random triples.
    For a fixed graph and seed, a larger budget yields a superset.
    """
    if budget <= 0:
        return np.zeros((0, 3), dtype=np.int64)
    n = graph.n
    two_hop = _two_hop_lists(graph)

    def pair_stream(i: int):
        verts = two_hop[i]
        for a in range(len(verts)):
            for b in range(a + 1, len(verts)):
                yield (i, verts[a], verts[b])

    chosen: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()
    streams = [pair_stream(i) for i in range(n)]
    active = list(range(n))
    while active and len(chosen) < budget:
        survivors = []
        for idx in active:
            try:
                tri = next(streams[idx])
            except StopIteration:
                continue
            survivors.append(idx)
            if tri not in seen:
                seen.add(tri)
                chosen.append(tri)
                if len(chosen) >= budget:
                    break
        else:
            active = survivors
            continue
        break

    total_possible = n * (n - 1) * (n - 2) // 2
    attempts = 0
    while (
        len(chosen) < budget
        and len(seen) < total_possible
        and attempts < 60 * budget
    ):
        attempts += 1
        i = int(rng.integers(n))
        j = int(rng.integers(n))
        k = int(rng.integers(n))
        if i == j or i == k or j == k:
            continue
        tri = (i, j, k) if j < k else (i, k, j)
        if tri not in seen:
            seen.add(tri)
            chosen.append(tri)
    if not chosen:
        return np.zeros((0, 3), dtype=np.int64)
    return np.asarray(chosen, dtype=np.int64)


@dataclass
class LpProblem:
    """The assembled ordinal distance program for one kNN graph.

    Variables, in column order: upper-triangle distances D_ij (i < j),
    radii R_i, edge slacks alpha (one per directed edge), non-edge
    slacks beta (one per directed non-edge).  All are nonnegative.
    """

    n: int
    k: int
    v_total: float
    margin: float
    edges: np.ndarray
    non_edges: np.ndarray
    triples: np.ndarray

    @classmethod
    def from_graph(cls, graph: KnnGraph, config: LpConfig | None = None) -> LpProblem:
        config = config or LpConfig()
        if graph.n > config.max_n:
            raise InvalidParameterError(
                f"graph has {graph.n} vertices; the program is guarded at "
                f"max_n={config.max_n}"
            )
        v_total = float(config.v_total) if config.v_total is not None else float(graph.n)
        budget = (
            config.triple_budget
            if config.triple_budget is not None
            else TRIPLES_PER_VERTEX * graph.n
        )
        rng = np.random.default_rng(config.seed)
        adj = graph.adjacency()
        off_diag = ~np.eye(graph.n, dtype=bool)
        non_edges = np.argwhere((adj == 0) & off_diag).astype(np.int64)
        return cls(
            n=graph.n,
            k=graph.k,
            v_total=v_total,
            margin=MARGIN_SCALE * v_total / graph.n,
            edges=graph.edge_array().astype(np.int64),
            non_edges=non_edges,
            triples=_sample_triples(graph, budget, rng),
        )

    @property
    def pair_count(self) -> int:
        return self.n * (self.n - 1) // 2

    @property
    def nvar(self) -> int:
        return self.pair_count + self.n + len(self.edges) + len(self.non_edges)

    def constraint_matrices(self):
        """Objective and constraints as (c, A_ub, b_ub, A_eq, b_eq)."""
        n = self.n
        pairs = self.pair_count
        m_e = len(self.edges)
        m_ne = len(self.non_edges)
        m_t = len(self.triples)
        off_r = pairs
        off_a = pairs + n
        off_b = pairs + n + m_e

        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []

        def put(r, c, v):
            rows.append(np.asarray(r, dtype=np.int64))
            cols.append(np.asarray(c, dtype=np.int64))
            vals.append(np.full(len(rows[-1]), float(v)))

        er = np.arange(m_e)
        put(er, _pair_cols(n, self.edges[:, 0], self.edges[:, 1]), 1.0)
        put(er, off_r + self.edges[:, 0], -1.0)
        put(er, off_a + er, -1.0)

        nr = m_e + np.arange(m_ne)
        put(nr, _pair_cols(n, self.non_edges[:, 0], self.non_edges[:, 1]), -1.0)
        put(nr, off_r + self.non_edges[:, 0], 1.0)
        put(nr, off_b + np.arange(m_ne), -1.0)

        if m_t:
            tr = m_e + m_ne + np.arange(m_t)
            apex, j, k = self.triples.T
            put(tr, _pair_cols(n, j, k), 1.0)
            put(tr, _pair_cols(n, apex, j), -1.0)
            put(tr, _pair_cols(n, apex, k), -1.0)

        a_ub = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(m_e + m_ne + m_t, self.nvar),
        )
        b_ub = np.concatenate(
            [np.zeros(m_e), np.full(m_ne, -self.margin), np.zeros(m_t)]
        )
        c = np.zeros(self.nvar)
        c[off_a:] = 1.0
        a_eq = sp.csr_matrix(
            (np.ones(n), (np.zeros(n, dtype=np.int64), off_r + np.arange(n))),
            shape=(1, self.nvar),
        )
        b_eq = np.array([self.v_total])
        return c, a_ub, b_ub, a_eq, b_eq

    def max_violation(self, x: np.ndarray) -> float:
        """Worst residual of any constraint or bound at the point x."""
        c, a_ub, b_ub, a_eq, b_eq = self.constraint_matrices()
        worst = float((a_ub @ x - b_ub).max(initial=0.0))
        worst = max(worst, float(np.abs(a_eq @ x - b_eq).max()))
        worst = max(worst, float((-x).max(initial=0.0)))
        return worst

    def to_text(self) -> str:
        """The program in plain LP text format (see README grammar)."""
        n = self.n

        def dname(a, b):
            a, b = (a, b) if a < b else (b, a)
            return f"d_{a}_{b}"

        lines = [
            f"\\ ordinal distance program: n={n} k={self.k} "
            f"edges={len(self.edges)} nonedges={len(self.non_edges)} "
            f"triples={len(self.triples)}",
            "Minimize",
        ]
        terms = [f"a_{s}_{t}" for s, t in self.edges]
        terms += [f"b_{s}_{t}" for s, t in self.non_edges]
        for pos in range(0, len(terms), 8):
            chunk = " + ".join(terms[pos : pos + 8])
            head = " obj: " if pos == 0 else "   + "
            lines.append(head + chunk)
        lines.append("Subject To")
        for t, (s, dst) in enumerate(self.edges):
            lines.append(f" edge_{t}: {dname(s, dst)} - r_{s} - a_{s}_{dst} <= 0")
        for t, (s, dst) in enumerate(self.non_edges):
            lines.append(
                f" nonedge_{t}: -{dname(s, dst)} + r_{s} - b_{s}_{dst} "
                f"<= {-self.margin:.17g}"
            )
        for t, (apex, j, k) in enumerate(self.triples):
            lines.append(
                f" tri_{t}: {dname(j, k)} - {dname(apex, j)} - {dname(apex, k)} <= 0"
            )
        radius_terms = " + ".join(f"r_{i}" for i in range(n))
        lines.append(f" radius_total: {radius_terms} = {self.v_total:.17g}")
        lines.append("Bounds")
        lines.append("\\ all variables nonnegative (the LP-format default)")
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class LpSolution:
    """Optimal distances, radii, and slacks of the ordinal program."""

    dist: np.ndarray
    radii: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    objective: float


def _scipy_solver(c, a_ub, b_ub, a_eq, b_eq) -> np.ndarray:
    """Bundled solver: interior point first, simplex as fallback.

    With total slack minimized, the optimal set is usually a large
    face; a simplex vertex picks extreme two-valued distances that
    embed poorly, while the interior point's centered optimum spreads
    distances smoothly.  Crossover is disabled to keep that center.
    """
    with warnings.catch_warnings():
        # scipy forwards the crossover switch to the backend verbatim
        # and warns that it does not recognize it itself
        warnings.simplefilter("ignore", OptimizeWarning)
        res = linprog(
            c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
            bounds=(0.0, None), method="highs-ipm",
            options={"run_crossover": "off"},
        )
        if res.status != 0 or res.x is None:
            res = linprog(
                c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                bounds=(0.0, None), method="highs",
            )
    if res.status != 0 or res.x is None:
        raise SolverError(f"linear program failed: {res.message}")
    return res.x


def lp_solve(graph: KnnGraph, config: LpConfig | None = None) -> LpSolution:
    """Solve the ordinal distance program for a kNN graph.

    Minimizes total slack; the returned solution is audited against
    every emitted constraint and bound before being unpacked.
    """
    config = config or LpConfig()
    problem = LpProblem.from_graph(graph, config)
    c, a_ub, b_ub, a_eq, b_eq = problem.constraint_matrices()
    solve = config.solver or _scipy_solver
    x = np.asarray(solve(c, a_ub, b_ub, a_eq, b_eq), dtype=float).ravel()
    if x.shape != (problem.nvar,) or not np.all(np.isfinite(x)):
        raise SolverError(
            f"solver returned shape {x.shape}, expected ({problem.nvar},) finite"
        )
    worst = problem.max_violation(x)
    if worst > AUDIT_TOL:
        raise SolverError(f"solution violates a constraint by {worst:.3e}")

    n = problem.n
    pairs = problem.pair_count
    dist = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    dist[iu] = np.maximum(x[:pairs], 0.0)
    dist += dist.T
    off_a = pairs + n
    return LpSolution(
        dist=dist,
        radii=x[pairs:off_a].copy(),
        alpha=x[off_a : off_a + len(problem.edges)].copy(),
        beta=x[off_a + len(problem.edges) :].copy(),
        objective=float(c @ x),
    )


def lpem_embed(graph: KnnGraph, d: int = 2, config: LpConfig | None = None) -> PointCloud:
    """Embed a kNN graph by the distance program followed by metric MDS."""
    solution = lp_solve(graph, config)
    return stress_mds(solution.dist, d)

"""Grid density estimation by total-variation penalized likelihood.

The estimator maximizes the sample log-likelihood of a piecewise
constant density on a regular grid, penalized by the total variation
of the cell values, under the unit-mass constraint.  The saddle point
is found by an alternating-direction scheme: a splitting variable
carries the gradient field, closed-form vector shrinkage handles the
TV term, and the likelihood subproblem reduces to one positive root
of a quadratic per cell, swept in red-black order.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .errors import InvalidInputError, InvalidParameterError

logger = logging.getLogger(__name__)

FLOOR = 1e-12
MIN_POINTS = 10
COARSE_BLOCK = 4


@dataclass(frozen=True)
class TvMpleConfig:
    """Estimator settings; the defaults match the reference regime."""

    tv_weight: float = 1e-4
    rho: float = 1.0
    gamma: float = 1.0
    iterations: int = 200
    inner_sweeps: int = 2
    resolution: int = 64

    def __post_init__(self):
        for name in ("tv_weight", "rho", "gamma"):
            if getattr(self, name) <= 0.0:
                raise InvalidParameterError(f"{name} must be > 0")
        if self.iterations < 1:
            raise InvalidParameterError(f"need iterations >= 1, got {self.iterations}")
        if self.inner_sweeps < 1:
            raise InvalidParameterError(
                f"need inner_sweeps >= 1, got {self.inner_sweeps}"
            )
        if self.resolution < 2:
            raise InvalidParameterError(f"need resolution >= 2, got {self.resolution}")


@dataclass
class DensityGrid:
    """Cell densities over an axis-aligned box; u[i, j] is x-bin i, y-bin j."""

    box: tuple[float, float, float, float]
    u: np.ndarray
    cell_area: float

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.u.ndim != 2 or self.u.shape[0] != self.u.shape[1]:
            raise InvalidInputError(f"u must be square 2-d, got shape {self.u.shape}")
        if (self.u < 0.0).any() or not np.isfinite(self.u).all():
            raise InvalidInputError("cell densities must be finite and nonnegative")
        if self.cell_area <= 0.0:
            raise InvalidInputError(f"need cell_area > 0, got {self.cell_area}")

    @property
    def resolution(self) -> int:
        return int(self.u.shape[0])

    def total_mass(self) -> float:
        return float(self.u.sum() * self.cell_area)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xmin, xmax, ymin, ymax = self.box
        g = self.resolution
        xs = xmin + (np.arange(g) + 0.5) * (xmax - xmin) / g
        ys = ymin + (np.arange(g) + 0.5) * (ymax - ymin) / g
        return xs, ys


def _as_points(points) -> np.ndarray:
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInputError(f"need (n, 2) points, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise InvalidInputError("points contain non-finite values")
    if pts.shape[0] < MIN_POINTS:
        raise InvalidInputError(
            f"need at least {MIN_POINTS} points, got {pts.shape[0]}"
        )
    return pts


def _count_points(pts: np.ndarray, box, g: int) -> np.ndarray:
    """Per-cell point counts; points outside the box snap to the rim."""
    xmin, xmax, ymin, ymax = box
    outside = (
        (pts[:, 0] < xmin) | (pts[:, 0] > xmax)
        | (pts[:, 1] < ymin) | (pts[:, 1] > ymax)
    )
    if outside.any():
        warnings.warn(
            f"{int(outside.sum())} points fall outside the domain box; "
            "clamped to the nearest cell",
            stacklevel=3,
        )
    ix = np.clip(((pts[:, 0] - xmin) / (xmax - xmin) * g).astype(int), 0, g - 1)
    iy = np.clip(((pts[:, 1] - ymin) / (ymax - ymin) * g).astype(int), 0, g - 1)
    counts = np.zeros((g, g))
    np.add.at(counts, (ix, iy), 1.0)
    return counts


def _grad(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences, no-flux boundary (rows/cols just end)."""
    return u[1:, :] - u[:-1, :], u[:, 1:] - u[:, :-1]


def _subproblem_energy(u, qx, qy, z, weights, rho, gamma, area) -> float:
    gx, gy = _grad(u)
    mask = weights > 0.0
    data = -float((weights[mask] * np.log(u[mask])).sum())
    quad = 0.5 * rho * (((gx - qx) ** 2).sum() + ((gy - qy) ** 2).sum())
    norm = 0.5 * gamma * (area * u.sum() - 1.0 + z) ** 2
    return data + quad + norm


def _u_objective(u, dx, dy, yx, yy, z, weights, rho, gamma, area) -> float:
    """Likelihood subproblem energy; the u-update must not increase it."""
    return _subproblem_energy(u, dx - yx, dy - yy, z, weights, rho, gamma, area)


def _neighbor_sum(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    out[:-1, :] += u[1:, :]
    out[1:, :] += u[:-1, :]
    out[:, :-1] += u[:, 1:]
    out[:, 1:] += u[:, :-1]
    return out


def _incidence_count(g: int) -> np.ndarray:
    m = np.zeros((g, g))
    m[:-1, :] += 1.0
    m[1:, :] += 1.0
    m[:, :-1] += 1.0
    m[:, 1:] += 1.0
    return m


def _adjoint_field(qx: np.ndarray, qy: np.ndarray) -> np.ndarray:
    """Adjoint of the forward-difference gradient applied to a field."""
    g = qx.shape[1]
    out = np.zeros((g, g))
    out[1:, :] += qx
    out[:-1, :] -= qx
    out[:, 1:] += qy
    out[:, :-1] -= qy
    return out


def _cells_given_pressure(v, a0, b0, w, coef):
    """Per-cell minimizers under a frozen scalar constraint pressure.

    Stationarity at a cell is a0*u + b0 + coef*v - w/u = 0, so u is
    the positive root of a quadratic; cells without samples take the
    clipped linear solution.  Entrywise decreasing in v.
    """
    b = b0 + coef * v
    disc = np.sqrt(b * b + 4.0 * a0 * w)
    root = (disc - b) / (2.0 * a0)
    out = np.where(w > 0.0, root, np.maximum(-b / a0, 0.0))
    return np.maximum(out, FLOOR)


def _cell_pressure_slope(cells, a0, b0, w, coef, v):
    b = b0 + coef * v
    grad = np.where(
        (w > 0.0) | (cells > FLOOR), -coef * cells / (2.0 * a0 * cells + b), 0.0
    )
    # samples make u strictly positive, so the denominator stays away
    # from zero there; floored cells contribute nothing
    return grad


def _sweep_u(u, qx, qy, weights, rho, gamma, area, z, masks) -> None:
    """One red-black sweep of the likelihood subproblem, in place.

    Within one color the cells decouple except through the unit-mass
    penalty, whose force is the scalar v = area*sum(u) - 1 + z.  Given
    v every cell has a closed-form minimizer, and v itself solves a
    strictly decreasing scalar consistency equation, found here by
    bisection-safeguarded Newton.  Each half-sweep is therefore an
    exact joint minimization over its color.
    """
    g = u.shape[0]
    a_all = rho * _incidence_count(g)
    atq = _adjoint_field(qx, qy)
    coef = gamma * area
    for mask in masks:
        neigh = _neighbor_sum(u)
        a0 = a_all[mask]
        b0 = (-rho * neigh - rho * atq)[mask]
        w = weights[mask]
        frozen = area * float(u[~mask].sum()) - 1.0 + z

        def gap(v):
            cells = _cells_given_pressure(v, a0, b0, w, coef)
            return area * float(cells.sum()) + frozen - v, cells

        v = area * float(u[mask].sum()) + frozen
        val, cells = gap(v)
        lo = hi = v
        step = 1.0 + abs(v)
        while val > 0.0:  # root lies above: gap decreases in v
            lo = v
            v += step
            step *= 2.0
            val, cells = gap(v)
        hi = v
        if lo == hi:
            step = 1.0 + abs(v)
            while val < 0.0:
                hi = v
                v -= step
                step *= 2.0
                val, cells = gap(v)
            lo = v
        for _ in range(100):
            if abs(val) <= 1e-14 * (1.0 + abs(v)):
                break
            if val > 0.0:
                lo = v
            else:
                hi = v
            slope = area * float(
                _cell_pressure_slope(cells, a0, b0, w, coef, v).sum()
            ) - 1.0
            trial = v - val / slope if slope < 0.0 else None
            v = trial if trial is not None and lo < trial < hi else 0.5 * (lo + hi)
            val, cells = gap(v)
        u[mask] = cells


def _coarse_correction(u, qx, qy, weights, rho, gamma, area, z,
                       block: int = COARSE_BLOCK) -> None:
    """Exact coarse-grid step for the likelihood subproblem, in place.

    The sweeps damp cell-scale error quickly but transport mass one
    cell per sweep, so grid-spanning modes would need about g^2 sweeps
    to settle.  This step minimizes the subproblem's second-order model
    over piecewise-constant corrections on a block-coarsened grid (the
    sweeps act as the smoother of a two-grid scheme) and backtracks on
    the exact objective, so the update never increases it.
    """
    g = u.shape[0]
    s = block
    if g % s != 0 or g // s < 2:
        return
    gc = g // s
    n_coarse = gc * gc
    violation = area * u.sum() - 1.0 + z
    residual = (
        weights / u
        - rho * (_incidence_count(g) * u - _neighbor_sum(u) - _adjoint_field(qx, qy))
        - gamma * area * violation
    )
    blocks = residual.reshape(gc, s, gc, s).sum(axis=(1, 3))
    data_diag = (weights / (u * u)).reshape(gc, s, gc, s).sum(axis=(1, 3))

    idx = np.arange(n_coarse).reshape(gc, gc)
    lap = np.zeros((n_coarse, n_coarse))
    for left, right in ((idx[:-1, :], idx[1:, :]), (idx[:, :-1], idx[:, 1:])):
        a = left.ravel()
        b = right.ravel()
        lap[a, a] += 1.0
        lap[b, b] += 1.0
        lap[a, b] -= 1.0
        lap[b, a] -= 1.0
    # each coarse interface crosses `s` fine edges; the mass penalty
    # couples every pair of coarse cells through the block sum
    hess = rho * s * lap + gamma * (area * s * s) ** 2
    hess[np.arange(n_coarse), np.arange(n_coarse)] += data_diag.ravel()
    coarse = np.linalg.solve(hess, blocks.ravel()).reshape(gc, gc)
    step = np.repeat(np.repeat(coarse, s, axis=0), s, axis=1)

    base = _subproblem_energy(u, qx, qy, z, weights, rho, gamma, area)
    t = 1.0
    for _ in range(25):
        cand = np.maximum(u + t * step, FLOOR)
        if _subproblem_energy(cand, qx, qy, z, weights, rho, gamma, area) <= base:
            u[:] = cand
            return
        t *= 0.5


def _shrink(sx: np.ndarray, sy: np.ndarray, threshold: float):
    """Vector shrinkage of the gradient field by the TV threshold.

    The two difference components live on staggered strips; cells that
    carry both are shrunk isotropically, the two rim strips that carry
    only one component fall back to scalar soft-thresholding.
    """
    dx = np.zeros_like(sx)
    dy = np.zeros_like(sy)
    cx = sx[:, :-1]
    cy = sy[:-1, :]
    mag = np.sqrt(cx * cx + cy * cy)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > 0.0, np.maximum(1.0 - threshold / mag, 0.0), 0.0)
    dx[:, :-1] = scale * cx
    dy[:-1, :] = scale * cy
    for strip_s, strip_d in ((sx[:, -1], dx[:, -1]), (sy[-1, :], dy[-1, :])):
        strip_d[...] = np.sign(strip_s) * np.maximum(np.abs(strip_s) - threshold, 0.0)
    return dx, dy


def tv_mple(points, config: TvMpleConfig | None = None, domain=None) -> DensityGrid:
    """Estimate a piecewise constant density from 2-d sample points.

    ``domain`` is an (xmin, xmax, ymin, ymax) box; by default the
    bounding box of the points.  Sample counts weight the likelihood
    per cell (each point carries mass 1/n), the total-variation weight
    acts through the shrinkage threshold, and dual ascent enforces
    unit mass.
    """
    config = config or TvMpleConfig()
    pts = _as_points(points)
    n = pts.shape[0]
    g = config.resolution
    if domain is None:
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        span = np.maximum(hi - lo, 1e-9)
        domain = (lo[0], lo[0] + span[0], lo[1], lo[1] + span[1])
    xmin, xmax, ymin, ymax = (float(v) for v in domain)
    if xmax <= xmin or ymax <= ymin:
        raise InvalidInputError(f"degenerate domain box {domain}")
    area = (xmax - xmin) / g * (ymax - ymin) / g
    weights = _count_points(pts, (xmin, xmax, ymin, ymax), g) / n

    u = np.full((g, g), 1.0 / (g * g * area))
    dx, dy = _grad(u)
    yx = np.zeros_like(dx)
    yy = np.zeros_like(dy)
    z = 0.0
    ii, jj = np.indices((g, g))
    masks = (((ii + jj) % 2 == 0), ((ii + jj) % 2 == 1))
    debug = logger.isEnabledFor(logging.DEBUG)
    threshold = config.tv_weight / config.rho
    # per-unit-area penalty: keeps the mass constraint as stiff as the
    # smoothing terms at any grid resolution, so the dual stays damped
    gscale = config.gamma / (area * area)

    for it in range(config.iterations):
        qx = dx - yx
        qy = dy - yy
        _coarse_correction(u, qx, qy, weights, config.rho, gscale, area, z)
        for sweep in range(config.inner_sweeps):
            if debug:
                before = _u_objective(u, dx, dy, yx, yy, z, weights,
                                      config.rho, gscale, area)
            _sweep_u(u, qx, qy, weights, config.rho, gscale, area, z, masks)
            if debug:
                after = _u_objective(u, dx, dy, yx, yy, z, weights,
                                     config.rho, gscale, area)
                logger.debug(
                    "iter %d sweep %d objective %.12g -> %.12g", it, sweep, before, after
                )
        gx, gy = _grad(u)
        dx, dy = _shrink(gx + yx, gy + yy, threshold)
        yx += gx - dx
        yy += gy - dy
        z += area * u.sum() - 1.0

    return DensityGrid(box=(xmin, xmax, ymin, ymax), u=u, cell_area=area)


def unit_box_rescale(points: np.ndarray) -> np.ndarray:
    """Shift to the origin and scale uniformly into the unit box."""
    pts = np.asarray(points, dtype=float)
    lo = pts.min(axis=0)
    span = float(np.max(pts.max(axis=0) - lo))
    return (pts - lo) / max(span, 1e-9)


def density_pipeline(graph, method: str = "asap-loe",
                     config: TvMpleConfig | None = None, d: int = 2,
                     seed: int = 0, loe_iters: int = 300,
                     asap_config=None) -> DensityGrid:
    """Embed a kNN graph, rescale to the unit box, estimate the density."""
    est = embed_graph(graph, method, d=d, seed=seed, loe_iters=loe_iters,
                      asap_config=asap_config)
    return tv_mple(unit_box_rescale(est), config)


def embed_graph(graph, method: str, d: int = 2, seed: int = 0,
                loe_iters: int = 300, asap_config=None) -> np.ndarray:
    """Dispatch one of the reconstruction methods by name."""
    from .baselines import laplacian_eigenmaps
    from .loe import LoeConfig, OrdinalProblem, loe_embed, spectral_init
    from .sync import AsapConfig, asap_embed

    if method == "asap-loe":
        cfg = asap_config or AsapConfig(seed=seed)
        return asap_embed(graph, d, cfg).cloud.points
    if method in ("loe-bfgs", "loe-mm"):
        problem = OrdinalProblem.from_graph(graph, d)
        init = spectral_init(graph, d, seed=seed)
        cfg = LoeConfig(
            max_iters=loe_iters,
            method=method.removeprefix("loe-"),
            init=init,
            seed=seed,
        )
        return loe_embed(problem, cfg).cloud.points
    if method == "le":
        return laplacian_eigenmaps(graph, d).points
    raise InvalidParameterError(
        f"unknown method {method!r}, expected asap-loe, loe-bfgs, loe-mm, or le"
    )


def grid_l1_distance(grid: DensityGrid, density) -> float:
    """L1 distance between the grid and a density function of (x, y).

    ``density`` is evaluated at cell centers; both sides are treated
    as piecewise constant on the grid.
    """
    xs, ys = grid.cell_centers()
    ref = np.asarray(density(xs[:, None], ys[None, :]), dtype=float)
    if ref.shape != grid.u.shape:
        raise InvalidInputError(
            f"density evaluation shape {ref.shape} != grid shape {grid.u.shape}"
        )
    return float(np.abs(grid.u - ref).sum() * grid.cell_area)


def write_density_csv(grid: DensityGrid, path, tv_weight: float | None = None) -> None:
    """Comma-delimited cell matrix with the box recorded in the header."""
    header = (
        f"box {grid.box[0]!r} {grid.box[1]!r} {grid.box[2]!r} {grid.box[3]!r}\n"
        f"cell_area {grid.cell_area!r}\n"
        "rows are x bins, columns are y bins"
    )
    if tv_weight is not None:
        header += f"\ntv_weight {tv_weight!r}"
    np.savetxt(path, grid.u, delimiter=",", header=header)


def read_density_csv(path) -> DensityGrid:
    box = None
    cell_area = None
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            fields = line[1:].split()
            if fields and fields[0] == "box":
                box = tuple(float(v) for v in fields[1:5])
            elif fields and fields[0] == "cell_area":
                cell_area = float(fields[1])
    if box is None or cell_area is None:
        raise InvalidInputError(f"{path} lacks the density grid header")
    u = np.loadtxt(path, delimiter=",")
    return DensityGrid(box=box, u=u, cell_area=cell_area)


def write_density_pgm(grid: DensityGrid, path, tv_weight: float | None = None) -> None:
    """16-bit PGM rendering, brightest cell at full scale, y axis up."""
    top = float(grid.u.max())
    img = np.zeros_like(grid.u) if top <= 0.0 else grid.u / top
    raw = np.round(img.T[::-1, :] * 65535.0).astype(">u2")
    comment = f"# box {grid.box} cell_area {grid.cell_area}"
    if tv_weight is not None:
        comment += f" tv_weight {tv_weight}"
    g = grid.resolution
    with open(path, "wb") as fh:
        fh.write(f"P5\n{comment}\n{g} {g}\n65535\n".encode())
        fh.write(raw.tobytes())

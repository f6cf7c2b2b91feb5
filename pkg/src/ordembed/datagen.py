"""Synthetic point-cloud generators with controlled density profiles.

Every generator is deterministic per seed.  The 2-d families live in
the unit square, the 3-d families in the unit cube or a solid torus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .errors import InvalidParameterError

DATASET_NAMES = ("pc", "pcs", "gauss", "halfcube", "donut")

# Geometry constants.  The piecewise-constant families split on the
# first axis at 0.5; the sub-square family boosts the centred square
# with half the side length; the torus has major radius 1, minor 0.4.
SPLIT = 0.5
SUBSQUARE_LO, SUBSQUARE_HI = 0.25, 0.75
TORUS_MAJOR, TORUS_MINOR = 1.0, 0.4
GAUSS_CENTER = (0.0, 0.0)
GAUSS_SIGMA = 1.0


@dataclass(frozen=True)
class SyntheticDensitySpec:
    """Recipe for one synthetic cloud.

    ``name`` is one of 'pc', 'pcs', 'gauss', 'halfcube', 'donut';
    ``ratio`` is the density ratio between the dense and sparse region
    for the piecewise-constant families (ignored by the others).
    """

    name: str
    n: int
    ratio: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.name not in DATASET_NAMES:
            raise InvalidParameterError(
                f"unknown dataset {self.name!r}, expected one of {DATASET_NAMES}"
            )
        if self.n < 1:
            raise InvalidParameterError(f"need n >= 1, got {self.n}")
        ratio = self.ratio
        if self.name in ("pc", "pcs", "halfcube"):
            if ratio == 0.0:
                # defaults: 4 for the half-plane families, 2 for the sub-square
                ratio = 2.0 if self.name == "pcs" else 4.0
                object.__setattr__(self, "ratio", ratio)
            if ratio <= 0.0:
                raise InvalidParameterError(f"density ratio must be > 0, got {ratio}")

    @property
    def dim(self) -> int:
        return 3 if self.name in ("halfcube", "donut") else 2


def _two_region_points(rng, n, ratio, dim):
    """Unit-cube sample, first-axis halves with density ratio r : 1."""
    p_dense = ratio / (1.0 + ratio)
    pts = rng.uniform(size=(n, dim))
    dense = rng.uniform(size=n) < p_dense
    # fold the first axis into [SPLIT, 1) for dense picks, [0, SPLIT) else
    pts[:, 0] = pts[:, 0] * SPLIT + np.where(dense, SPLIT, 0.0)
    return pts


def _subsquare_points(rng, n, ratio):
    """Unit square with a boosted centre square of quarter area."""
    area_in = (SUBSQUARE_HI - SUBSQUARE_LO) ** 2
    area_out = 1.0 - area_in
    p_in = ratio * area_in / (ratio * area_in + area_out)
    inside = rng.uniform(size=n) < p_in
    pts = np.empty((n, 2))
    n_in = int(inside.sum())
    pts[inside] = rng.uniform(SUBSQUARE_LO, SUBSQUARE_HI, size=(n_in, 2))
    # rejection-sample the complement of the centre square
    todo = np.flatnonzero(~inside)
    while todo.size:
        draw = rng.uniform(size=(todo.size, 2))
        bad = (
            (draw[:, 0] >= SUBSQUARE_LO)
            & (draw[:, 0] < SUBSQUARE_HI)
            & (draw[:, 1] >= SUBSQUARE_LO)
            & (draw[:, 1] < SUBSQUARE_HI)
        )
        pts[todo[~bad]] = draw[~bad]
        todo = todo[bad]
    return pts


def _donut_points(rng, n):
    """Uniform sample of a solid torus by rejection from its bounding box."""
    lim = TORUS_MAJOR + TORUS_MINOR
    pts = np.empty((n, 3))
    need = np.arange(n)
    while need.size:
        draw = np.column_stack(
            [
                rng.uniform(-lim, lim, size=need.size),
                rng.uniform(-lim, lim, size=need.size),
                rng.uniform(-TORUS_MINOR, TORUS_MINOR, size=need.size),
            ]
        )
        radial = np.hypot(draw[:, 0], draw[:, 1]) - TORUS_MAJOR
        ok = radial**2 + draw[:, 2] ** 2 <= TORUS_MINOR**2
        pts[need[ok]] = draw[ok]
        need = need[~ok]
    return pts


def generate(spec: SyntheticDensitySpec) -> PointCloud:
    """Sample a cloud according to its spec, deterministically per seed."""
    rng = np.random.default_rng(spec.seed)
    if spec.name == "pc":
        pts = _two_region_points(rng, spec.n, spec.ratio, dim=2)
    elif spec.name == "pcs":
        pts = _subsquare_points(rng, spec.n, spec.ratio)
    elif spec.name == "gauss":
        pts = rng.normal(loc=GAUSS_CENTER, scale=GAUSS_SIGMA, size=(spec.n, 2))
    elif spec.name == "halfcube":
        pts = _two_region_points(rng, spec.n, spec.ratio, dim=3)
    elif spec.name == "donut":
        pts = _donut_points(rng, spec.n)
    else:  # pragma: no cover - guarded in __post_init__
        raise InvalidParameterError(f"unknown dataset {spec.name!r}")
    return PointCloud(points=pts)


def true_density(spec: SyntheticDensitySpec):
    """Analytic density of a 2-d family, as a function of (x, y) arrays.

    Broadcasts over its inputs; the 3-d families have no 2-d density
    and are rejected.
    """
    if spec.name == "pc":
        lo = 2.0 / (1.0 + spec.ratio)
        hi = spec.ratio * lo

        def pc_density(x, y):
            return np.where(np.asarray(x) >= SPLIT, hi, lo) * np.ones_like(y)

        return pc_density
    if spec.name == "pcs":
        area_in = (SUBSQUARE_HI - SUBSQUARE_LO) ** 2
        base = 1.0 / (spec.ratio * area_in + (1.0 - area_in))

        def pcs_density(x, y):
            inside = (
                (np.asarray(x) >= SUBSQUARE_LO) & (np.asarray(x) < SUBSQUARE_HI)
                & (np.asarray(y) >= SUBSQUARE_LO) & (np.asarray(y) < SUBSQUARE_HI)
            )
            return np.where(inside, spec.ratio * base, base)

        return pcs_density
    if spec.name == "gauss":
        def gauss_density(x, y):
            quad = ((np.asarray(x) - GAUSS_CENTER[0]) ** 2
                    + (np.asarray(y) - GAUSS_CENTER[1]) ** 2)
            return np.exp(-quad / (2.0 * GAUSS_SIGMA**2)) / (2.0 * np.pi * GAUSS_SIGMA**2)

        return gauss_density
    raise InvalidParameterError(f"no 2-d density for dataset {spec.name!r}")

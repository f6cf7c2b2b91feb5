"""Reconstruction of point configurations from unweighted kNN graphs.

The package turns the directed k-nearest-neighbour graph of an unknown
point cloud back into coordinates, up to a similarity transform.  The
main path splits the graph into overlapping patches, embeds each patch
from its ordinal constraints, and synchronises patch scales, rotations
and translations into one global configuration.  Side paths provide
spectral and stress-based baselines, an LP-based distance estimator,
and total-variation-regularised density estimation on top of any
embedding.
"""

from .baselines import classical_mds, laplacian_eigenmaps, stress_mds
from .cloud import (
    KnnGraph,
    PointCloud,
    build_knn_graph,
    dense_k,
    resolve_k,
    sparse_k,
)
from .datagen import SyntheticDensitySpec, generate
from .density import (
    DensityGrid,
    TvMpleConfig,
    density_pipeline,
    tv_mple,
    unit_box_rescale,
)
from .loe import LoeConfig, LoeResult, OrdinalProblem, loe_embed, loe_energy
from .lp_embed import LpConfig, LpProblem, LpSolution, lp_solve, lpem_embed
from .metrics import (
    a_error,
    misplaced_edges,
    misplaced_edges_scaled,
    procrustes_error,
    similarity_align,
)
from .patches import PatchSet, decompose
from .rigidity import RigidityReport, global_rigidity, local_rigidity
from .sync import AsapConfig, asap_embed, synchronize

__version__ = "0.1.0"

__all__ = [
    "AsapConfig",
    "DensityGrid",
    "KnnGraph",
    "LoeConfig",
    "LoeResult",
    "LpConfig",
    "LpProblem",
    "LpSolution",
    "OrdinalProblem",
    "PatchSet",
    "PointCloud",
    "RigidityReport",
    "SyntheticDensitySpec",
    "TvMpleConfig",
    "a_error",
    "asap_embed",
    "build_knn_graph",
    "classical_mds",
    "decompose",
    "dense_k",
    "density_pipeline",
    "generate",
    "global_rigidity",
    "laplacian_eigenmaps",
    "local_rigidity",
    "loe_embed",
    "loe_energy",
    "lp_solve",
    "lpem_embed",
    "misplaced_edges",
    "misplaced_edges_scaled",
    "procrustes_error",
    "resolve_k",
    "similarity_align",
    "sparse_k",
    "stress_mds",
    "synchronize",
    "tv_mple",
    "unit_box_rescale",
]

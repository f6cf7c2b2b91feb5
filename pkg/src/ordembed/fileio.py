"""Delimited text formats for clouds, graphs and adjacency matrices.

Clouds travel as CSV with header ``x1,...,xd[,label]`` and 17
significant digits per coordinate, enough for a lossless float64
round-trip.  Graphs travel as whitespace-delimited edge lists whose
first line is the sidecar comment ``# n=<n> k=<k>``; adjacency
matrices as sparse ``i,j,1`` triplet CSV.  All files are UTF-8 with
LF line endings.
"""

from __future__ import annotations

import os

import numpy as np

from .cloud import KnnGraph, PointCloud
from .errors import InvalidInputError, ParseError

FLOAT_FMT = "{:.17g}"


def save_cloud(cloud: PointCloud, path: str | os.PathLike) -> None:
    """Write a cloud as CSV with coordinate header and optional labels."""
    d = cloud.dim
    header = ",".join(f"x{j + 1}" for j in range(d))
    if cloud.labels is not None:
        header += ",label"
    lines = [header]
    for i in range(cloud.n):
        row = ",".join(FLOAT_FMT.format(v) for v in cloud.points[i])
        if cloud.labels is not None:
            row += f",{cloud.labels[i]}"
        lines.append(row)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_cloud(path: str | os.PathLike) -> PointCloud:
    """Read a cloud CSV written by :func:`save_cloud` (or same shape)."""
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    rows = [(idx + 1, line) for idx, line in enumerate(raw) if line.strip()]
    if not rows:
        raise ParseError("empty cloud file")
    header_no, header = rows[0]
    cols = [c.strip() for c in header.split(",")]
    has_label = bool(cols) and cols[-1] == "label"
    coord_cols = cols[:-1] if has_label else cols
    expect = [f"x{j + 1}" for j in range(len(coord_cols))]
    if not coord_cols or coord_cols != expect:
        raise ParseError(
            f"bad header {header!r}, expected x1,...,xd[,label]", line=header_no
        )
    d = len(coord_cols)
    points, labels = [], []
    for line_no, line in rows[1:]:
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != d + (1 if has_label else 0):
            raise ParseError(
                f"expected {d + (1 if has_label else 0)} fields, got {len(parts)}",
                line=line_no,
            )
        try:
            points.append([float(p) for p in parts[:d]])
        except ValueError as exc:
            raise ParseError(f"bad coordinate: {exc}", line=line_no) from None
        if has_label:
            labels.append(parts[d])
    if not points:
        raise ParseError("cloud file has a header but no points")
    try:
        return PointCloud(
            points=np.asarray(points), labels=labels if has_label else None
        )
    except InvalidInputError as exc:
        raise ParseError(str(exc)) from None


def save_edge_list(graph: KnnGraph, path: str | os.PathLike) -> None:
    """Write the directed edges, one ``src dst`` pair per line.

    The first line records n and k so the graph can be reconstructed
    without re-deriving them.
    """
    lines = [f"# n={graph.n} k={graph.k}"]
    for src, dst in graph.edge_array():
        lines.append(f"{src} {dst}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_sidecar(line: str, line_no: int) -> tuple[int, int]:
    parts = line.lstrip("#").split()
    vals = {}
    for part in parts:
        key, _, val = part.partition("=")
        if key in ("n", "k"):
            try:
                vals[key] = int(val)
            except ValueError:
                raise ParseError(f"bad sidecar value {part!r}", line=line_no) from None
    if "n" not in vals or "k" not in vals:
        raise ParseError(
            f"sidecar must read '# n=<n> k=<k>', got {line!r}", line=line_no
        )
    return vals["n"], vals["k"]


def load_edge_list(path: str | os.PathLike) -> KnnGraph:
    """Read a directed kNN graph from an edge list with sidecar line.

    Every vertex must list exactly k distinct neighbours; neighbour
    order within a vertex follows file order.
    """
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    rows = [(idx + 1, line.strip()) for idx, line in enumerate(raw) if line.strip()]
    if not rows:
        raise ParseError("empty edge-list file")
    first_no, first = rows[0]
    if not first.startswith("#"):
        raise ParseError("missing '# n=<n> k=<k>' sidecar line", line=first_no)
    n, k = _parse_sidecar(first, first_no)
    if not 1 <= k < n:
        raise ParseError(f"sidecar violates 1 <= k < n: n={n} k={k}", line=first_no)
    nbrs: list[list[int]] = [[] for _ in range(n)]
    seen: set[tuple[int, int]] = set()
    for line_no, line in rows[1:]:
        if line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'src dst', got {line!r}", line=line_no)
        try:
            src, dst = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"non-integer vertex id in {line!r}", line=line_no) from None
        if not (0 <= src < n and 0 <= dst < n):
            raise ParseError(f"vertex id out of range in {line!r}", line=line_no)
        if src == dst:
            raise ParseError(f"self-loop {src} -> {dst}", line=line_no)
        if (src, dst) in seen:
            raise ParseError(f"duplicate edge {src} -> {dst}", line=line_no)
        seen.add((src, dst))
        nbrs[src].append(dst)
    for v, lst in enumerate(nbrs):
        if len(lst) != k:
            raise ParseError(f"vertex {v} has {len(lst)} out-edges, expected k={k}")
    return KnnGraph(n=n, k=k, out_neighbors=np.asarray(nbrs, dtype=np.int64))


def save_adjacency(adj: np.ndarray, path: str | os.PathLike) -> None:
    """Write a 0/1 adjacency matrix as ``i,j,1`` triplet CSV."""
    a = np.asarray(adj)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"adjacency must be square, got shape {a.shape}")
    ii, jj = np.nonzero(a)
    lines = [f"{i},{j},1" for i, j in zip(ii, jj)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(["i,j,v"] + lines) + "\n")


def load_adjacency(path: str | os.PathLike, n: int) -> np.ndarray:
    """Read triplet CSV back into a dense n x n 0/1 matrix."""
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    adj = np.zeros((n, n), dtype=np.uint8)
    for idx, line in enumerate(raw):
        line_no = idx + 1
        if not line.strip() or line_no == 1:
            continue  # header or blank
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ParseError(f"expected 'i,j,v', got {line!r}", line=line_no)
        try:
            i, j, v = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            raise ParseError(f"non-integer entry in {line!r}", line=line_no) from None
        if not (0 <= i < n and 0 <= j < n):
            raise ParseError(f"index out of range in {line!r}", line=line_no)
        if v != 1:
            raise ParseError(f"triplet value must be 1, got {v}", line=line_no)
        adj[i, j] = 1
    return adj

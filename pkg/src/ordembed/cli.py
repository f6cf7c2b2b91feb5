"""Command-line pipeline around the library.

Subcommands generate synthetic clouds, build kNN graphs, run any of
the embedders, evaluate against ground truth, estimate densities, and
sweep method/parameter grids into Pareto tables.  Every report path
emits delimited data (CSV/JSON) plus a rendered PNG figure.  A TOML
config file can preload any flag; explicit flags win.  Exit codes:
0 success, 2 validation/usage error, 3 structural or numerical error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import tomli

from .cloud import KnnGraph, PointCloud, build_knn_graph, resolve_k
from .datagen import SyntheticDensitySpec, generate
from .density import (
    TvMpleConfig,
    density_pipeline,
    write_density_csv,
    write_density_pgm,
)
from .errors import (
    InvalidInputError,
    InvalidParameterError,
    PipelineError,
    ValidationError,
)
from .fileio import FLOAT_FMT, load_cloud, load_edge_list, save_cloud, save_edge_list
from .lp_embed import LpConfig, lpem_embed
from .metrics import a_error, misplaced_edges, procrustes_error, similarity_align
from .sync import AsapConfig, SyncSolution, asap_embed

METHODS = ("le", "loe-bfgs", "loe-mm", "asap-loe", "lpem")
DATASETS = ("pc", "pcs", "gauss", "halfcube", "donut", "file")
RECORD_FIELDS = (
    "method", "k_rule", "mps", "iters", "delta", "seed",
    "seconds", "e_a", "procrustes", "misplaced", "artifacts",
)


@dataclass(frozen=True)
class RunRecord:
    """One pipeline run: method, parameters, timing, metrics, outputs."""

    method: str
    k_rule: str
    delta: float
    seed: int
    seconds: float
    artifacts: tuple[str, ...] = ()
    mps: Optional[int] = None
    iters: Optional[int] = None
    e_a: Optional[float] = None
    procrustes: Optional[float] = None
    misplaced: Optional[int] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidParameterError(
                f"method must be one of {METHODS}, got {self.method!r}"
            )
        if self.seconds < 0.0:
            raise InvalidInputError(f"need seconds >= 0, got {self.seconds}")


def _record_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return FLOAT_FMT.format(value)
    if isinstance(value, tuple):
        return ";".join(value)
    return str(value)


def write_run_records(records: Sequence[RunRecord],
                      path: str | os.PathLike) -> None:
    """Write records as CSV, one row per run, blank cells for absent metrics."""
    lines = [",".join(RECORD_FIELDS)]
    for rec in records:
        lines.append(
            ",".join(_record_cell(getattr(rec, name)) for name in RECORD_FIELDS)
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_run_records(path: str | os.PathLike) -> list[RunRecord]:
    """Read back a CSV written by :func:`write_run_records`."""
    with open(path, encoding="utf-8") as fh:
        raw = [line for line in fh.read().splitlines() if line.strip()]
    if not raw or raw[0] != ",".join(RECORD_FIELDS):
        raise InvalidInputError(f"unrecognized run-record header in {path}")
    out = []
    for line in raw[1:]:
        parts = line.split(",")
        if len(parts) != len(RECORD_FIELDS):
            raise InvalidInputError(f"bad run-record row {line!r}")
        row = dict(zip(RECORD_FIELDS, parts))
        out.append(RunRecord(
            method=row["method"],
            k_rule=row["k_rule"],
            delta=float(row["delta"]),
            seed=int(row["seed"]),
            seconds=float(row["seconds"]),
            artifacts=tuple(p for p in row["artifacts"].split(";") if p),
            mps=int(row["mps"]) if row["mps"] else None,
            iters=int(row["iters"]) if row["iters"] else None,
            e_a=float(row["e_a"]) if row["e_a"] else None,
            procrustes=float(row["procrustes"]) if row["procrustes"] else None,
            misplaced=int(row["misplaced"]) if row["misplaced"] else None,
        ))
    return out


def write_sync_json(solution: SyncSolution, path: str | os.PathLike) -> None:
    """Summarize a synchronization solution as JSON."""
    payload = {
        "n": solution.cloud.n,
        "d": solution.cloud.dim,
        "patch_sizes": [len(p.vertices) for p in solution.pset.patches],
        "scales": solution.scales.tolist(),
        "rotations": solution.rotations.tolist(),
        "translation_residual": solution.translation_residual,
        "patch_energies": solution.patch_energies,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_sync_json(path: str | os.PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# argument plumbing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ordembed",
        description="Reconstruct coordinates from unweighted kNN graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, data=True):
        p.add_argument("--config", help="TOML file preloading any flag")
        p.add_argument("--out", help="output directory (default: .)")
        p.add_argument("--seed", type=int, help="RNG seed (default 0)")
        if data:
            p.add_argument("--dataset", choices=DATASETS,
                           type=lambda s: s.lower(),
                           help="synthetic family, or 'file' with --points")
            p.add_argument("--n", type=int, help="number of points")
            p.add_argument("--ratio", type=float,
                           help="density ratio for pc/pcs/halfcube")
            p.add_argument("--points", help="cloud CSV (dataset 'file')")

    p = sub.add_parser("generate", help="sample a synthetic cloud")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("graph", help="build a directed kNN graph")
    common(p)
    p.add_argument("--k", help="neighbour count: integer, 'sparse' or 'dense'")
    p.set_defaults(func=cmd_graph)

    def embed_flags(p):
        p.add_argument("--graph", help="edge-list file (else build from dataset)")
        p.add_argument("--truth", help="ground-truth cloud CSV for metrics")
        p.add_argument("--k", help="neighbour count: integer, 'sparse' or 'dense'")
        p.add_argument("--d", type=int, help="embedding dimension (default 2)")
        p.add_argument("--method", choices=METHODS, help="embedder (default asap-loe)")
        p.add_argument("--mps", type=int, help="maximum patch size")
        p.add_argument("--iters", type=int, help="solver iteration cap")
        p.add_argument("--delta", type=float, help="ordinal margin (default 1)")
        p.add_argument("--threads", type=int,
                       help="worker threads (default $ORDEMBED_THREADS or 1)")
        p.add_argument("--skip-scale-sync", action="store_true", default=None)
        p.add_argument("--skip-rigidity", action="store_true", default=None)

    p = sub.add_parser("embed", help="embed a graph into coordinates")
    common(p)
    embed_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", help="score an estimate against ground truth")
    common(p, data=False)
    p.add_argument("--truth", required=True, help="ground-truth cloud CSV")
    p.add_argument("--est", required=True, help="estimated cloud CSV")
    p.add_argument("--graph", required=True, help="edge-list file")
    p.add_argument("--method", choices=METHODS,
                   help="method id recorded in the output row")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("density", help="embed a graph and estimate its density")
    common(p)
    embed_flags(p)
    p.add_argument("--lambda", dest="lam", type=float,
                   help="total-variation weight (default 1e-4)")
    p.add_argument("--tv-iters", type=int,
                   help="density solver outer iterations (default 200)")
    p.add_argument("--resolution", type=int, help="density grid size (default 64)")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("pareto", help="sweep a method grid into a Pareto table")
    common(p)
    p.add_argument("--k", help="neighbour count: integer, 'sparse' or 'dense'")
    p.add_argument("--d", type=int, help="embedding dimension (default 2)")
    p.add_argument("--methods", nargs="+", metavar="METHOD[:P1,P2,...]",
                   help="grid cells; params are iters for loe-*, "
                        "mps for asap-loe, triple budget for lpem")
    p.add_argument("--seeds", help="comma-separated seed list (default: --seed)")
    p.add_argument("--delta", type=float, help="ordinal margin (default 1)")
    p.add_argument("--threads", type=int,
                   help="grid worker threads (default $ORDEMBED_THREADS or 1)")
    p.set_defaults(func=cmd_pareto)

    return parser


def _load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from None
    except tomli.TOMLDecodeError as exc:
        raise InvalidInputError(f"bad TOML in {path}: {exc}") from None


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the TOML file: [command] table, then top level."""
    if not getattr(args, "config", None):
        return args
    table = _load_config(args.config)
    section = table.get(args.command, {})
    if not isinstance(section, dict):
        raise InvalidInputError(
            f"config section [{args.command}] must be a table"
        )
    for key, value in {**{k: v for k, v in table.items()
                          if not isinstance(v, dict)}, **section}.items():
        dest = key.replace("-", "_")
        if dest == "lambda":
            dest = "lam"
        if hasattr(args, dest) and getattr(args, dest) is None:
            setattr(args, dest, value)
    return args


def _get(args, name, default):
    value = getattr(args, name, None)
    return default if value is None else value


def _threads(args) -> int:
    value = getattr(args, "threads", None)
    if value is None:
        raw = os.environ.get("ORDEMBED_THREADS", "1")
        try:
            value = int(raw)
        except ValueError:
            raise InvalidParameterError(
                f"ORDEMBED_THREADS must be an integer, got {raw!r}"
            ) from None
    if value < 1:
        raise InvalidParameterError(f"need threads >= 1, got {value}")
    return value


def _out_dir(args) -> str:
    out = _get(args, "out", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _dataset_cloud(args) -> PointCloud:
    dataset = getattr(args, "dataset", None)
    if dataset == "file" or (dataset is None and getattr(args, "points", None)):
        path = getattr(args, "points", None)
        if not path:
            raise InvalidParameterError("dataset 'file' needs --points")
        return load_cloud(path)
    if dataset is None:
        raise InvalidParameterError("need --dataset (or --points)")
    if args.n is None:
        raise InvalidParameterError("need --n with a synthetic dataset")
    spec = SyntheticDensitySpec(
        name=dataset, n=args.n, ratio=_get(args, "ratio", 0.0),
        seed=_get(args, "seed", 0),
    )
    return generate(spec)


def _resolve_graph(args) -> tuple[KnnGraph, Optional[PointCloud], str]:
    """Input graph, ground truth if known, and the k rule as given."""
    if getattr(args, "graph", None):
        graph = load_edge_list(args.graph)
        truth = load_cloud(args.truth) if getattr(args, "truth", None) else None
        return graph, truth, str(graph.k)
    cloud = _dataset_cloud(args)
    k_rule = _get(args, "k", "sparse")
    graph = build_knn_graph(cloud, resolve_k(k_rule, cloud.n))
    return graph, cloud, str(k_rule)


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# commands

def cmd_generate(args) -> int:
    if getattr(args, "dataset", None) in (None, "file"):
        raise InvalidParameterError("generate needs a synthetic --dataset")
    cloud = _dataset_cloud(args)
    out = _out_dir(args)
    path = os.path.join(out, "points.csv")
    save_cloud(cloud, path)
    print(f"dataset={args.dataset} n={cloud.n} d={cloud.dim} -> {path}")
    return 0


def cmd_graph(args) -> int:
    cloud = _dataset_cloud(args)
    k_rule = _get(args, "k", "sparse")
    k = resolve_k(k_rule, cloud.n)
    graph = build_knn_graph(cloud, k)
    out = _out_dir(args)
    gpath = os.path.join(out, "graph.edges")
    save_edge_list(graph, gpath)
    written = [gpath]
    if getattr(args, "dataset", None) != "file" and not getattr(args, "points", None):
        ppath = os.path.join(out, "points.csv")
        save_cloud(cloud, ppath)
        written.append(ppath)
    print(f"n={graph.n} k={graph.k} edges={graph.n * graph.k} -> "
          + " ".join(written))
    return 0


def _embed_points(graph: KnnGraph, args, *, d: int, method: str,
                  threads: int) -> tuple[np.ndarray, Optional[SyncSolution]]:
    seed = _get(args, "seed", 0)
    iters = getattr(args, "iters", None)
    if method == "asap-loe":
        cfg = AsapConfig(
            max_patch_size=_get(args, "mps", 400),
            delta=_get(args, "delta", 1.0),
            loe_iters=150 if iters is None else iters,
            seed=seed,
            threads=threads,
            skip_scale_sync=bool(_get(args, "skip_scale_sync", False)),
            skip_rigidity=bool(_get(args, "skip_rigidity", False)),
        )
        solution = asap_embed(graph, d, cfg)
        return solution.cloud.points, solution
    if method in ("loe-bfgs", "loe-mm", "le"):
        from .density import embed_graph

        pts = embed_graph(graph, method, d=d, seed=seed,
                          loe_iters=300 if iters is None else iters)
        return pts, None
    if method == "lpem":
        cfg = LpConfig(seed=seed)
        return lpem_embed(graph, d, cfg).points, None
    raise InvalidParameterError(f"unknown method {method!r}")


def _score(graph: KnnGraph, est: np.ndarray,
           truth: Optional[PointCloud]) -> tuple[float, int, Optional[float]]:
    est_adj = build_knn_graph(PointCloud(points=est), graph.k).adjacency()
    ref_adj = graph.adjacency()
    ea = a_error(est_adj, ref_adj)
    bad = misplaced_edges(est_adj, ref_adj)
    proc = None
    if truth is not None:
        if truth.dim == est.shape[1]:
            proc = procrustes_error(truth.points, est)
        else:
            _note(f"truth is {truth.dim}-d but estimate is {est.shape[1]}-d; "
                  "skipping Procrustes")
    return ea, bad, proc


def cmd_embed(args) -> int:
    from .plots import scatter_plot

    graph, truth, k_rule = _resolve_graph(args)
    method = _get(args, "method", "asap-loe")
    d = _get(args, "d", 2)
    threads = _threads(args)
    out = _out_dir(args)

    start = time.perf_counter()
    est, solution = _embed_points(graph, args, d=d, method=method,
                                  threads=threads)
    seconds = time.perf_counter() - start

    fused = os.path.join(out, "fused.csv")
    save_cloud(PointCloud(points=est), fused)
    artifacts = [fused]
    if solution is not None:
        spath = os.path.join(out, "sync.json")
        write_sync_json(solution, spath)
        artifacts.append(spath)
    artifacts.append(scatter_plot(est, os.path.join(out, "fused.png"),
                                  title=f"{method} n={graph.n} k={graph.k}"))
    # record paths relative to the run directory so records travel with it
    artifacts = [os.path.relpath(p, out) for p in artifacts]

    ea, bad, proc = _score(graph, est, truth)
    record = RunRecord(
        method=method, k_rule=k_rule, delta=_get(args, "delta", 1.0),
        seed=_get(args, "seed", 0), seconds=seconds,
        artifacts=tuple(artifacts),
        mps=_get(args, "mps", 400) if method == "asap-loe" else None,
        iters=getattr(args, "iters", None),
        e_a=ea, procrustes=proc, misplaced=bad,
    )
    rpath = os.path.join(out, "record.csv")
    write_run_records([record], rpath)
    _note(f"embedded in {seconds:.2f}s")
    proc_txt = "" if proc is None else f" procrustes={proc:.6g}"
    print(f"method={method} E_A={ea:.6g} misplaced={bad}{proc_txt} -> {rpath}")
    return 0


def cmd_eval(args) -> int:
    from .plots import overlay_plot

    truth = load_cloud(args.truth)
    est = load_cloud(args.est)
    graph = load_edge_list(args.graph)
    if truth.n != est.n or truth.n != graph.n:
        raise InvalidInputError(
            f"size mismatch: truth n={truth.n}, estimate n={est.n}, "
            f"graph n={graph.n}"
        )
    out = _out_dir(args)
    start = time.perf_counter()
    ea, bad, proc = _score(graph, est.points, truth)
    seconds = time.perf_counter() - start

    artifacts = []
    if truth.dim == est.dim:
        q, s, t = similarity_align(truth.points, est.points)
        aligned = est.points @ q * s + t
        path = overlay_plot(truth.points, aligned,
                            os.path.join(out, "eval.png"),
                            title="truth vs aligned estimate")
        artifacts.append(os.path.relpath(path, out))
    record = RunRecord(
        method=_get(args, "method", "asap-loe"), k_rule=str(graph.k),
        delta=1.0, seed=_get(args, "seed", 0), seconds=seconds,
        artifacts=tuple(artifacts), e_a=ea, procrustes=proc, misplaced=bad,
    )
    rpath = os.path.join(out, "record.csv")
    write_run_records([record], rpath)
    proc_txt = "" if proc is None else f" procrustes={proc:.6g}"
    print(f"E_A={ea:.6g} misplaced={bad}{proc_txt} -> {rpath}")
    return 0


def cmd_density(args) -> int:
    from .plots import density_heatmap

    graph, _, _ = _resolve_graph(args)
    method = _get(args, "method", "asap-loe")
    if method == "lpem":
        raise InvalidParameterError("density supports asap-loe, loe-bfgs, "
                                    "loe-mm, and le")
    threads = _threads(args)
    seed = _get(args, "seed", 0)
    cfg = TvMpleConfig(
        tv_weight=_get(args, "lam", 1e-4),
        iterations=_get(args, "tv_iters", 200),
        resolution=_get(args, "resolution", 64),
    )
    asap_cfg = None
    if method == "asap-loe":
        iters = getattr(args, "iters", None)
        asap_cfg = AsapConfig(
            max_patch_size=_get(args, "mps", 400),
            delta=_get(args, "delta", 1.0),
            loe_iters=150 if iters is None else iters,
            seed=seed,
            threads=threads,
            skip_scale_sync=bool(_get(args, "skip_scale_sync", False)),
            skip_rigidity=bool(_get(args, "skip_rigidity", False)),
        )
    start = time.perf_counter()
    grid = density_pipeline(
        graph, method, config=cfg, d=_get(args, "d", 2), seed=seed,
        loe_iters=_get(args, "iters", 300), asap_config=asap_cfg,
    )
    seconds = time.perf_counter() - start
    out = _out_dir(args)
    cpath = os.path.join(out, "density.csv")
    write_density_csv(grid, cpath, tv_weight=cfg.tv_weight)
    ppath = os.path.join(out, "density.pgm")
    write_density_pgm(grid, ppath, tv_weight=cfg.tv_weight)
    fpath = density_heatmap(grid, os.path.join(out, "density.png"),
                            title=f"{method} density, lambda={cfg.tv_weight:g}")
    _note(f"estimated in {seconds:.2f}s")
    print(f"method={method} resolution={grid.resolution} "
          f"mass={grid.total_mass():.6f} -> {cpath} {ppath} {fpath}")
    return 0


def _parse_method_grid(tokens: Sequence[str]) -> list[tuple[str, Optional[int]]]:
    """Expand METHOD[:P1,P2,...] tokens into (method, param) cells."""
    cells: list[tuple[str, Optional[int]]] = []
    for token in tokens:
        name, _, params = token.partition(":")
        if name not in METHODS:
            raise InvalidParameterError(
                f"unknown method {name!r} in --methods, expected one of {METHODS}"
            )
        if not params:
            cells.append((name, None))
            continue
        if name == "le":
            raise InvalidParameterError("le takes no grid parameter")
        for part in params.split(","):
            try:
                cells.append((name, int(part)))
            except ValueError:
                raise InvalidParameterError(
                    f"bad grid parameter {part!r} in {token!r}"
                ) from None
    return cells


def _parse_seeds(args) -> list[int]:
    raw = getattr(args, "seeds", None)
    if raw is None:
        return [_get(args, "seed", 0)]
    if isinstance(raw, int):
        return [raw]
    try:
        return [int(p) for p in str(raw).split(",") if p.strip()]
    except ValueError:
        raise InvalidParameterError(f"bad --seeds list {raw!r}") from None


def cmd_pareto(args) -> int:
    from .plots import pareto_plot

    if not getattr(args, "methods", None):
        raise InvalidParameterError("pareto needs --methods")
    methods = args.methods
    if isinstance(methods, str):
        methods = methods.split()
    cells = _parse_method_grid(methods)
    seeds = _parse_seeds(args)
    threads = _threads(args)
    delta = _get(args, "delta", 1.0)
    d = _get(args, "d", 2)
    k_rule = _get(args, "k", "sparse")

    def run_cell(cell_seed: tuple[tuple[str, Optional[int]], int]) -> RunRecord:
        (method, param), seed = cell_seed
        cloud = _dataset_cloud(_ns(args, seed=seed))
        graph = build_knn_graph(cloud, resolve_k(k_rule, cloud.n))
        ns = _ns(
            args, seed=seed, delta=delta,
            mps=param if method == "asap-loe" else None,
            iters=param if method in ("loe-bfgs", "loe-mm") else None,
        )
        start = time.perf_counter()
        if method == "lpem":
            cfg = LpConfig(seed=seed,
                           triple_budget=param if param else None)
            est = lpem_embed(graph, d, cfg).points
        else:
            est, _ = _embed_points(graph, ns, d=d, method=method, threads=1)
        seconds = time.perf_counter() - start
        ea, bad, proc = _score(graph, est, cloud)
        return RunRecord(
            method=method, k_rule=str(k_rule), delta=delta, seed=seed,
            seconds=seconds, mps=param if method == "asap-loe" else None,
            iters=param if method in ("loe-bfgs", "loe-mm", "lpem") else None,
            e_a=ea, procrustes=proc, misplaced=bad,
        )

    jobs = [(cell, seed) for cell in cells for seed in seeds]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run_cell, jobs))
    else:
        records = [run_cell(job) for job in jobs]

    out = _out_dir(args)
    rpath = os.path.join(out, "pareto.csv")
    write_run_records(records, rpath)
    label = {
        "asap-loe": "asap-loe mps={}", "loe-bfgs": "loe-bfgs iters={}",
        "loe-mm": "loe-mm iters={}", "lpem": "lpem budget={}", "le": "le",
    }
    rows = []
    for rec in records:
        param = rec.mps if rec.method == "asap-loe" else rec.iters
        name = label[rec.method].format(param) if param is not None else rec.method
        rows.append((name, rec.seconds, rec.e_a))
    fpath = pareto_plot(rows, os.path.join(out, "pareto.png"),
                        title=f"{_get(args, 'dataset', 'file')} n={_get(args, 'n', '?')}")
    print(f"cells={len(records)} -> {rpath} {fpath}")
    return 0


def _ns(args, **over) -> argparse.Namespace:
    ns = argparse.Namespace(**vars(args))
    for key, value in over.items():
        setattr(ns, key, value)
    return ns


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config(args)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface for the aggregation pipeline.

Exit codes: 0 success, 2 usage or precondition error, 3 data-format error,
4 numerical failure (solver non-convergence, zero-vector normalization).
The MKAGG_THREADS environment variable provides the default for --threads.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import matio, retrieval
from .democratic import DemocraticConfig, aggregate_democratic, aggregate_sum, sinkhorn_weights
from .embed import EmbeddingConfig, embed_set, train_codebook
from .gmp import GmpConfig, aggregate_gmp, gmp_weights
from .kernel import gram
from .normalize import NormalizeConfig, apply_chain, l2_normalize, rn_fit
from .types import (
    AggregateVector,
    Codebook,
    DataFormatError,
    DescriptorSet,
    EmbeddedSet,
    NumericalError,
    WeightVector,
)


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("MKAGG_THREADS", "1")))
    except ValueError:
        return 1


def _load_descriptors(path: str) -> DescriptorSet:
    mat, _ = matio.read_matrix_file(path, matio.MAGIC_DESCRIPTORS)
    return DescriptorSet(mat)


def _load_codebook(path: str) -> Codebook:
    mat, _ = matio.read_matrix_file(path, matio.MAGIC_CODEBOOK)
    return Codebook(mat)


def cmd_train_codebook(args) -> int:
    training = _load_descriptors(args.input)
    codebook = train_codebook(training, c=args.clusters, seed=args.seed)
    matio.write_matrix_file(args.output, matio.MAGIC_CODEBOOK, codebook.centroids)
    print(f"wrote {args.clusters} centroids to {args.output}")
    return 0


def _aggregate_one(embedded: EmbeddedSet, args):
    """Returns (aggregate, weights, kernel); the kernel is None for sum unless dumped."""
    if args.method == "sum":
        kern = gram(embedded) if args.dump_weights else None
        return aggregate_sum(embedded), WeightVector(np.ones(embedded.n), "uniform"), kern
    kern = gram(embedded)
    if args.method == "democratic":
        weights = sinkhorn_weights(kern, DemocraticConfig(gamma=args.gamma, n_iter=args.iters))
        return aggregate_democratic(embedded, weights), weights, kern
    weights = gmp_weights(kern, GmpConfig(lam=args.lam))
    return aggregate_gmp(embedded, weights), weights, kern


def cmd_aggregate(args) -> int:
    descriptors = _load_descriptors(args.descriptors)
    codebook = _load_codebook(args.codebook)
    cfg = EmbeddingConfig(kind=args.embedding, normalize_residuals=args.normalize_residuals)
    embedded = embed_set(descriptors, codebook, cfg)
    aggregate, weights, kern = _aggregate_one(embedded, args)
    matio.save_vector(args.output, aggregate.xi)
    if args.dump_weights:
        with open(args.dump_weights, "w", encoding="utf-8") as fh:
            fh.write(retrieval.export_weights(kern, weights))
    print(f"wrote {aggregate.dim}-dim {args.method} aggregate to {args.output}")
    return 0


def cmd_normalize(args) -> int:
    vec = matio.load_vector(args.input)
    rotation = None
    if args.rn:
        rotation, _ = matio.read_matrix_file(args.rn, matio.MAGIC_ROTATION)
        rotation = rotation.astype(np.float64)
    cfg = NormalizeConfig(
        alpha_exponent=args.alpha, rotation=rotation, truncate_to=args.truncate
    )
    out = apply_chain(AggregateVector(vec, ("raw",)), cfg)
    matio.save_vector(args.output, out.xi)
    print(f"wrote normalized vector ({' -> '.join(out.state)}) to {args.output}")
    return 0


def cmd_rn_fit(args) -> int:
    entries = retrieval.read_manifest(args.vectors)
    vectors = [AggregateVector(matio.load_vector(path), ("raw",)) for _, path in entries]
    rotation = rn_fit(vectors, max_eigvecs=args.max_eigvecs)
    matio.write_matrix_file(args.output, matio.MAGIC_ROTATION, rotation)
    print(f"wrote {rotation.shape[0]}x{rotation.shape[1]} rotation to {args.output}")
    return 0


def _load_normalized(path: str) -> AggregateVector:
    # Vector files carry no normalization state; re-normalizing is idempotent
    # for already-unit vectors and makes raw aggregates comparable.
    vec = l2_normalize(matio.load_vector(path))
    return AggregateVector(vec, ("raw", "l2"))


def cmd_eval(args) -> int:
    index_entries = retrieval.read_manifest(args.index)
    query_entries = retrieval.read_manifest(args.queries)
    truth = retrieval.read_ground_truth(args.truth)

    index = [(item_id, _load_normalized(path)) for item_id, path in index_entries]
    queries = [(qid, _load_normalized(path)) for qid, path in query_entries]

    def ranked_ids(query_vec):
        return [item_id for item_id, _ in retrieval.rank(query_vec, index)]

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            ranked = list(pool.map(ranked_ids, [vec for _, vec in queries]))
    else:
        ranked = [ranked_ids(vec) for _, vec in queries]

    rankings = {qid: ids for (qid, _), ids in zip(queries, ranked)}
    aps = {
        qid: retrieval.average_precision(
            rankings[qid],
            truth.relevant.get(qid, frozenset()),
            truth.junk.get(qid, frozenset()),
            exclude_id=qid if args.exclude_self else None,
        )
        for qid in rankings
    }
    for qid in rankings:
        print(f"{qid}\t{aps[qid]:.6f}")
    print(f"mAP\t{float(np.mean(list(aps.values()))):.6f}")
    return 0


_DEMO_CLUSTER_ANGLES = np.linspace(np.deg2rad(80.0), np.deg2rad(100.0), 10)
_DEMO_DISTINCT_A = 0.0
_DEMO_DISTINCT_B = np.deg2rad(45.0)


def _demo_aggregates(distinct_angle: float) -> dict[str, np.ndarray]:
    angles = np.concatenate([_DEMO_CLUSTER_ANGLES, [distinct_angle]])
    phi = np.stack([np.cos(angles), np.sin(angles)])
    embedded = EmbeddedSet(phi=phi)
    kern = gram(embedded)
    dem = aggregate_democratic(embedded, sinkhorn_weights(kern, DemocraticConfig()))
    pooled = aggregate_gmp(embedded, gmp_weights(kern, GmpConfig(lam=1.0)))
    return {
        "sum": aggregate_sum(embedded).xi,
        "democratic": dem.xi,
        "gmp": pooled.xi,
    }


def cmd_demo2d(args) -> int:
    """2-D toy: a tight cluster of descriptors plus one distinctive descriptor.

    Sum pooling lets the cluster dominate, so the two configurations end up
    nearly parallel; the weighted aggregations keep them distinguishable.
    """
    lines = ["label\tx\ty"]
    for angle in _DEMO_CLUSTER_ANGLES:
        lines.append(f"cluster\t{np.cos(angle):.12g}\t{np.sin(angle):.12g}")
    lines.append(f"distinct_a\t{np.cos(_DEMO_DISTINCT_A):.12g}\t{np.sin(_DEMO_DISTINCT_A):.12g}")
    lines.append(f"distinct_b\t{np.cos(_DEMO_DISTINCT_B):.12g}\t{np.sin(_DEMO_DISTINCT_B):.12g}")
    for tag, angle in (("a", _DEMO_DISTINCT_A), ("b", _DEMO_DISTINCT_B)):
        for method, xi in _demo_aggregates(angle).items():
            lines.append(f"{method}_{tag}\t{xi[0]:.12g}\t{xi[1]:.12g}")
    text = "\n".join(lines) + "\n"
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"wrote 2-D pooling demo to {args.output}")
    return 0


def _timed(fn):
    wall0, cpu0 = time.perf_counter(), time.process_time()
    result = fn()
    return result, time.perf_counter() - wall0, time.process_time() - cpu0


def bench_rows(sizes: list[int], clusters: list[int], d: int = 16, seed: int = 0) -> list[dict]:
    """Time dense vs block kernel construction and weight solving.

    Returns one row per (n, c, stage) with wall/CPU seconds for both paths and
    the max absolute difference between their outputs.
    """
    rows = []
    for n in sizes:
        for c in clusters:
            rng = np.random.default_rng(seed)
            points = rng.normal(size=(n, d))
            points /= np.linalg.norm(points, axis=1, keepdims=True)
            codebook = Codebook(points[rng.choice(n, size=c, replace=False)])
            block_set = embed_set(
                DescriptorSet(points.astype(np.float32)), codebook, EmbeddingConfig("residual")
            )
            dense_set = EmbeddedSet(phi=block_set.phi)

            kern_dense, wall_gd, cpu_gd = _timed(lambda: gram(dense_set))
            kern_block, wall_gb, cpu_gb = _timed(lambda: gram(block_set))
            rows.append(
                dict(
                    n=n, c=c, stage="gram",
                    wall_dense=wall_gd, cpu_dense=cpu_gd,
                    wall_block=wall_gb, cpu_block=cpu_gb,
                    max_abs_diff=float(np.max(np.abs(kern_dense.to_dense() - kern_block.to_dense()))),
                )
            )

            agg_sum, wall_s, cpu_s = _timed(lambda: aggregate_sum(block_set))
            rows.append(
                dict(
                    n=n, c=c, stage="sum",
                    wall_dense=wall_s, cpu_dense=cpu_s,
                    wall_block=wall_s, cpu_block=cpu_s,
                    max_abs_diff=0.0,
                )
            )

            dem_cfg = DemocraticConfig()
            wd, wall_dd, cpu_dd = _timed(lambda: sinkhorn_weights(kern_dense, dem_cfg))
            wb, wall_db, cpu_db = _timed(lambda: sinkhorn_weights(kern_block, dem_cfg))
            diff = float(
                np.max(
                    np.abs(
                        aggregate_democratic(block_set, wd).xi
                        - aggregate_democratic(block_set, wb).xi
                    )
                )
            )
            rows.append(
                dict(
                    n=n, c=c, stage="democratic",
                    wall_dense=wall_dd, cpu_dense=cpu_dd,
                    wall_block=wall_db, cpu_block=cpu_db,
                    max_abs_diff=diff,
                )
            )

            gmp_cfg = GmpConfig(lam=1.0)
            gd, wall_md, cpu_md = _timed(lambda: gmp_weights(kern_dense, gmp_cfg))
            gb, wall_mb, cpu_mb = _timed(lambda: gmp_weights(kern_block, gmp_cfg))
            diff = float(
                np.max(np.abs(aggregate_gmp(block_set, gd).xi - aggregate_gmp(block_set, gb).xi))
            )
            rows.append(
                dict(
                    n=n, c=c, stage="gmp",
                    wall_dense=wall_md, cpu_dense=cpu_md,
                    wall_block=wall_mb, cpu_block=cpu_mb,
                    max_abs_diff=diff,
                )
            )
    return rows


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s]
    clusters = [int(s) for s in args.clusters.split(",") if s]
    if not sizes or not clusters:
        raise ValueError("--sizes and --clusters must be nonempty comma-separated integers")
    rows = bench_rows(sizes, clusters)
    print("n\tc\tstage\twall_dense_s\tcpu_dense_s\twall_block_s\tcpu_block_s\tmax_abs_diff")
    for r in rows:
        print(
            f"{r['n']}\t{r['c']}\t{r['stage']}\t{r['wall_dense']:.6f}\t{r['cpu_dense']:.6f}"
            f"\t{r['wall_block']:.6f}\t{r['cpu_block']:.6f}\t{r['max_abs_diff']:.3e}"
        )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mkagg", description="Descriptor-set aggregation and retrieval evaluation"
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=_default_threads(),
        help="worker cap for per-image parallel stages (default: MKAGG_THREADS or 1)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-codebook", help="k-means vocabulary from a descriptor file")
    p.add_argument("--input", required=True, help="MKDS descriptor file")
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True, help="MKCB output path")
    p.set_defaults(func=cmd_train_codebook)

    p = sub.add_parser("aggregate", help="embed a descriptor set and pool it into one vector")
    p.add_argument("--descriptors", required=True, help="MKDS descriptor file")
    p.add_argument("--codebook", required=True, help="MKCB codebook file")
    p.add_argument("--embedding", choices=("bow", "residual"), default="residual")
    p.add_argument(
        "--normalize-residuals", action=argparse.BooleanOptionalAction, default=True
    )
    p.add_argument("--method", choices=("sum", "democratic", "gmp"), default="sum")
    p.add_argument("--gamma", type=float, default=0.3, help="Sinkhorn damping exponent")
    p.add_argument("--iters", type=int, default=10, help="Sinkhorn iteration count")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="ridge regularizer")
    p.add_argument("--output", required=True, help="MKVC output path")
    p.add_argument("--dump-weights", default=None, help="optional per-descriptor weight TSV")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("normalize", help="apply the normalization chain to an aggregate")
    p.add_argument("--input", required=True, help="MKVC input path")
    p.add_argument("--alpha", type=float, default=0.5, help="power-law exponent")
    p.add_argument("--rn", default=None, help="optional MKRT rotation file")
    p.add_argument("--truncate", type=int, default=None, help="keep the first D' components")
    p.add_argument("--output", required=True, help="MKVC output path")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("rn-fit", help="learn a PCA rotation from aggregated vectors")
    p.add_argument("--vectors", required=True, help="manifest of id<TAB>vector_file lines")
    p.add_argument("--max-eigvecs", type=int, required=True)
    p.add_argument("--output", required=True, help="MKRT output path")
    p.set_defaults(func=cmd_rn_fit)

    p = sub.add_parser("eval", help="rank queries against an index and report mAP")
    p.add_argument("--index", required=True, help="manifest of id<TAB>vector_file lines")
    p.add_argument("--queries", required=True, help="manifest of id<TAB>vector_file lines")
    p.add_argument("--truth", required=True, help="ground-truth TSV")
    p.add_argument("--exclude-self", action="store_true", help="drop the query from its ranking")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo2d", help="2-D pooling demo as a plottable TSV")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_demo2d)

    p = sub.add_parser("bench", help="time dense vs block aggregation paths")
    p.add_argument("--sizes", required=True, help="comma-separated descriptor counts")
    p.add_argument("--clusters", required=True, help="comma-separated vocabulary sizes")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"mkagg: data format error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"mkagg: numerical failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"mkagg: i/o error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"mkagg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

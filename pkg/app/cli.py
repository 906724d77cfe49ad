"""
Command-line interface of the Orchestra simulator.

Subcommands: run, tune, partition-stats, cluster, grad-check, serve.
Exit codes: 0 success, 2 configuration error, 3 runtime or numerical error.
"""

import argparse
import json
import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from models import ExperimentConfig, SinkhornConfig, TuneGrid
from services import (
    ClusteringService,
    ConfigError,
    FormatError,
    OrchestraError,
    gen_mixture,
    inter_cluster_mixing,
    load_vectors_csv,
)
from services.experiment_service import (
    ExperimentService,
    load_json,
    partition_stats,
    run_tuning,
    write_csv,
)
from services.losses_service import GRADCHECK_THRESHOLD, gradient_check_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

# flag -> experiment key, applied only when the flag is given
OVERRIDES = {
    "alpha": "alpha",
    "clients": "num_clients",
    "rounds": "rounds",
    "participation": "participation",
    "global_clusters": "global_clusters",
    "local_clusters": "local_clusters",
    "method": "method",
    "seed": "seed",
    "lr": "lr",
    "local_epochs": "local_epochs",
    "batch_size": "batch_size",
    "output_dir": "output_dir",
    "workers": "workers",
}


def configure_logging(level: str | None) -> None:
    level_name = (level or os.getenv("ORCHESTRA_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, help="Dirichlet concentration")
    parser.add_argument("--clients", type=int, help="Number of clients K")
    parser.add_argument("--rounds", type=int, help="Communication rounds")
    parser.add_argument("--participation", type=float, help="Participation ratio R")
    parser.add_argument("--global-clusters", type=int, help="Global clusters G")
    parser.add_argument("--local-clusters", type=int, help="Local clusters L per client")
    parser.add_argument("--method", choices=["orchestra", "specloss", "rotpred", "random"])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--lr", type=float, help="Local learning rate")
    parser.add_argument("--local-epochs", type=int, help="Local epochs E")
    parser.add_argument("--batch-size", type=int, help="Minibatch size B")
    parser.add_argument("--output-dir", help="Root of the output directories")
    parser.add_argument("--workers", type=int, help="Threads running client rounds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orchestra-sim",
        description="Desk-scale simulator of federated representation learning by balanced clustering",
    )
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one experiment file")
    run.add_argument("config", help="Experiment JSON file")
    _add_override_flags(run)

    tune = sub.add_parser("tune", help="Score a hyperparameter grid with Align + 0.2 * Unif")
    tune.add_argument("grid", help="Grid JSON file with base, grid and tune_rounds keys")
    tune.add_argument("--output-dir", default=None, help="Where tune.csv is written")
    tune.add_argument("--workers", type=int, default=1, help="Grid entries scored concurrently")

    stats = sub.add_parser("partition-stats", help="Average classes per client across alphas and seeds")
    stats.add_argument("--clients", type=int, default=100)
    stats.add_argument("--alphas", type=float, nargs="+", default=[1e5, 1e-1, 1e-3])
    stats.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    stats.add_argument("--num-classes", type=int, default=10)
    stats.add_argument("--per-class", type=int, default=500)
    stats.add_argument("--input-dim", type=int, default=16)
    stats.add_argument("--min-shard-size", type=int, default=1)
    stats.add_argument("--output", help="Optional CSV file for the table")

    cluster = sub.add_parser("cluster", help="Balanced clustering of a CSV of vectors")
    cluster.add_argument("input", help="CSV with a header row; an optional leading 'label' column is ignored")
    cluster.add_argument("--clusters", type=int, required=True, help="Number of clusters G")
    cluster.add_argument("--epsilon", type=float, default=0.05)
    cluster.add_argument("--outer-iters", type=int, default=10)
    cluster.add_argument("--inner-iters", type=int, default=100)
    cluster.add_argument("--tol", type=float, default=1e-6)
    cluster.add_argument("--seed", type=int, default=0)
    cluster.add_argument("--output-dir", default=".", help="Where assignments.csv and centroids.csv go")

    grad = sub.add_parser("grad-check", help="Finite-difference check of every local loss")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--draws", type=int, default=20)

    serve = sub.add_parser("serve", help="Start the HTTP clustering service")
    serve.add_argument("--host", default=None)
    serve.add_argument("--port", type=int, default=None)
    return parser


def experiment_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Experiment file merged with command-line overrides."""
    payload: dict[str, Any] = load_json(args.config)
    for flag, key in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            payload[key] = value
    payload.setdefault("output_dir", os.getenv("ORCHESTRA_OUTPUT_DIR", "runs"))
    if "workers" not in payload and os.getenv("ORCHESTRA_WORKERS"):
        payload["workers"] = int(os.environ["ORCHESTRA_WORKERS"])
    return ExperimentConfig.model_validate(payload)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = experiment_from_args(args)
    service = ExperimentService(cfg)
    print(f"config hash: {service.config_hash}")
    result = service.run()
    final = result.final
    print(f"output: {service.output_dir}")
    print(f"rounds: {len(result.timeline)}")
    print(f"final linear probe: {final.linear_acc:.4f}" if final.linear_acc is not None else "final linear probe: n/a")
    print(f"final kNN probe: {final.knn_acc:.4f}" if final.knn_acc is not None else "final kNN probe: n/a")
    print(f"final tuner score: {final.tuner_score:.4f}")
    return EXIT_OK


def cmd_tune(args: argparse.Namespace) -> int:
    grid = TuneGrid.model_validate(load_json(args.grid))
    output_dir = Path(args.output_dir or os.getenv("ORCHESTRA_OUTPUT_DIR", "runs"))
    best, table = run_tuning(grid, output_dir, workers=args.workers)
    print(f"scored {len(table)} configurations; table written to {output_dir / 'tune.csv'}")
    print("best configuration:")
    print(json.dumps(json.loads(best.canonical_json()), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_partition_stats(args: argparse.Namespace) -> int:
    dataset = gen_mixture(args.num_classes, args.input_dim, args.per_class, 3.0, 1.0, 0)
    rows = partition_stats(dataset, args.clients, args.alphas, args.seeds, args.min_shard_size)
    header = ["alpha", "seed", "at_least_one", "at_least_1pct", "error"]
    table = [
        [
            repr(row["alpha"]),
            row["seed"],
            "" if row["at_least_one"] is None else f"{row['at_least_one']:.4f}",
            "" if row["at_least_1pct"] is None else f"{row['at_least_1pct']:.4f}",
            row["error"] or "",
        ]
        for row in rows
    ]
    print(",".join(header))
    for line in table:
        print(",".join(line))
    if args.output:
        write_csv(Path(args.output), header, table)
    return EXIT_OK


def cmd_cluster(args: argparse.Namespace) -> int:
    points, _ = load_vectors_csv(args.input)
    if points.shape[0] < args.clusters:
        raise ConfigError(f"cannot form {args.clusters} clusters from {points.shape[0]} rows")
    config = SinkhornConfig(
        epsilon=args.epsilon,
        outer_iters=args.outer_iters,
        inner_iters=args.inner_iters,
        tol=args.tol,
    )
    centroids, assignment = ClusteringService(config).cluster(points, args.clusters, args.seed)
    output_dir = Path(args.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    write_csv(
        output_dir / "assignments.csv",
        ["row", "cluster"],
        [[str(i), str(int(g))] for i, g in enumerate(assignment.assignment)],
    )
    write_csv(
        output_dir / "centroids.csv",
        ["cluster", *(f"c{j}" for j in range(centroids.dim))],
        [[str(g), *(repr(float(v)) for v in centroids.matrix[:, g])] for g in range(centroids.num_clusters)],
    )
    unit = points / np.linalg.norm(points, axis=1, keepdims=True)
    delta = inter_cluster_mixing(centroids, unit, assignment.assignment)
    print(f"cluster sizes: {assignment.cluster_sizes()}")
    print(f"delta: {'not applicable' if delta is None else repr(delta)}")
    return EXIT_OK


def cmd_grad_check(args: argparse.Namespace) -> int:
    report = gradient_check_suite(seed=args.seed, draws=args.draws)
    failed = False
    print(f"{'loss':<18} {'max rel err':>12}  status")
    for name, error in report.items():
        ok = error <= GRADCHECK_THRESHOLD
        failed = failed or not ok
        print(f"{name:<18} {error:>12.3e}  {'ok' if ok else 'FAIL'}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    host = args.host or os.getenv("ORCHESTRA_HOST", "127.0.0.1")
    port = args.port or int(os.getenv("ORCHESTRA_PORT", "8000"))
    uvicorn.run("app.main:app", host=host, port=port)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "tune": cmd_tune,
    "partition-stats": cmd_partition_stats,
    "cluster": cmd_cluster,
    "grad-check": cmd_grad_check,
    "serve": cmd_serve,
}


def main(argv: Sequence[str] | None = None) -> int:
    load_dotenv(dotenv_path="local.env")
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        for error in e.errors():
            field = ".".join(str(part) for part in error["loc"]) or "<config>"
            print(f"error: {field}: {error['msg']}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OrchestraError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except ArithmeticError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

    slutskylab simulate      --config run.yaml --out results/
    slutskylab solve         --config run.yaml --out results/
    slutskylab phase-diagram [--config run.yaml] --out results/
    slutskylab slutsky       --config run.yaml --out results/
    slutskylab ensemble-check --config run.yaml --out results/
    slutskylab reproduce fig3 --out results/ [--scale 0.2]
    slutskylab sweep         --config sweep.yaml --out results/ [--threads 4]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
The SLUTSKYLAB_THREADS environment variable overrides --threads.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import experiments
from .config import load_config
from .errors import (
    CalibrationFailure,
    ConfigError,
    EigSolverFailure,
    NoConvergence,
    SingularHessian,
    SlutskyLabError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_NUMERICAL = (NoConvergence, CalibrationFailure, EigSolverFailure, SingularHessian)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slutskylab",
        description="Monte Carlo and closed-form studies of noisy consumer choice",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", default=None, required=config_required,
                       help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the chain seed (u64)")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for independent points")
        p.add_argument("--scale", type=float, default=1.0,
                       help="multiply sweep counts (0.1 = ten times shorter)")

    common(sub.add_parser("simulate", help="run one chain, write observables"))
    common(sub.add_parser("solve", help="theory only: saddle point + critical lines"))
    common(sub.add_parser("phase-diagram",
                          help="concentration surface over (c, beta)"),
           config_required=False)
    common(sub.add_parser("slutsky",
                          help="pathwise + fluctuation-response Slutsky estimates"))
    common(sub.add_parser("ensemble-check",
                          help="soft-budget fluctuations vs the variance formula"))
    rep = sub.add_parser("reproduce", help="rerun a figure-style study")
    rep.add_argument("figure", choices=sorted(experiments.FIGURES))
    common(rep, config_required=False)
    common(sub.add_parser("sweep", help="parameter grid with per-point seeds"))
    return parser


def _threads(args) -> int:
    env = os.environ.get("SLUTSKYLAB_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"SLUTSKYLAB_THREADS: {env!r} is not an integer") from exc
    return max(1, args.threads)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        threads = _threads(args)
        tree = load_config(args.config) if args.config else {}
        if args.command == "simulate":
            files = experiments.simulate_run(tree, args.out, seed=args.seed,
                                             scale=args.scale)
        elif args.command == "solve":
            files = experiments.solve_run(tree, args.out, seed=args.seed)
        elif args.command == "phase-diagram":
            files = experiments.phase_diagram_run(tree, args.out, seed=args.seed,
                                                  scale=args.scale)
        elif args.command == "slutsky":
            files = experiments.slutsky_run(tree, args.out, seed=args.seed,
                                            scale=args.scale)
        elif args.command == "ensemble-check":
            files = experiments.ensemble_check_run(tree, args.out, seed=args.seed,
                                                   scale=args.scale)
        elif args.command == "reproduce":
            seed = args.seed if args.seed is not None else 12345
            files = experiments.run_experiment(args.figure, args.out, seed=seed,
                                               scale=args.scale)
        elif args.command == "sweep":
            files = experiments.sweep_run(tree, args.out, seed=args.seed,
                                          scale=args.scale, threads=threads)
            if any(f.name == "sweep_failures.txt" for f in files):
                for f in files:
                    print(f)
                print("some sweep points failed; see sweep_failures.txt",
                      file=sys.stderr)
                return EXIT_NUMERICAL
        else:   # pragma: no cover - argparse enforces choices
            raise ConfigError(f"unknown command {args.command!r}")
    except _NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SlutskyLabError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

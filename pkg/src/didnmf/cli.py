"""Command-line front end: run solvers, synthesize data, convert files."""

from __future__ import annotations

import argparse
import os
import sys

from .harness import (
    ALGORITHMS,
    INIT_METHODS,
    TRANSPORTS,
    RunConfig,
    run,
    synth_data,
    synth_lowrank,
)
from .matrix import read_csv_matrix, read_dmat, write_csv_matrix, write_dmat


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmf",
        description="Nonnegative matrix factorization, sequential and distributed.")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run one solver to the stopping criterion")
    runp.add_argument("--alg", required=True, choices=ALGORITHMS)
    runp.add_argument("--m", type=int, default=0, help="rows of synthetic data")
    runp.add_argument("--n", type=int, default=0, help="columns of synthetic data")
    runp.add_argument("--k", type=int, default=1, help="factorization rank")
    runp.add_argument("--p", type=int, default=1, help="number of workers")
    runp.add_argument("--eps", type=float, default=1e-6,
                      help="relative squared-residual stopping threshold")
    runp.add_argument("--max-iters", type=int, default=1000)
    runp.add_argument("--max-time", type=float, default=600.0,
                      help="wall-clock cap in seconds")
    runp.add_argument("--rho", type=float, default=1.0,
                      help="splitting penalty (admm and dadmm)")
    runp.add_argument("--seed", type=int, default=0)
    runp.add_argument("--transport", choices=TRANSPORTS, default="in-process")
    runp.add_argument("--init", choices=INIT_METHODS, default="scaled-random")
    runp.add_argument("--input", default=None,
                      help="data matrix file (.csv or DMAT1); overrides --m/--n")
    runp.add_argument("--out", default=None, help="metrics CSV path")

    synthp = sub.add_parser("synth", help="write a synthetic data matrix")
    synthp.add_argument("--m", type=int, required=True)
    synthp.add_argument("--n", type=int, required=True)
    synthp.add_argument("--seed", type=int, default=0)
    synthp.add_argument("--rank", type=int, default=0,
                        help="if positive, write an exactly rank-k product "
                             "instead of dense uniform entries")
    synthp.add_argument("--out", required=True,
                        help="output path (.csv or DMAT1 by extension)")

    convp = sub.add_parser("convert", help="convert a matrix between CSV and DMAT1")
    convp.add_argument("src")
    convp.add_argument("dst")
    return parser


def _cmd_run(args) -> int:
    config = RunConfig(
        algorithm=args.alg, m=args.m, n=args.n, k=args.k, p=args.p,
        epsilon=args.eps, max_iters=args.max_iters, max_time=args.max_time,
        rho=args.rho, seed=args.seed, transport=args.transport,
        init=args.init, input_path=args.input, out_path=args.out)
    metrics = run(config)
    rank = int(os.environ.get("NMF_RANK", "0")) if args.transport == "tcp" else 0
    if rank == 0:
        final = metrics.rows[-1].objective if metrics.rows else float("nan")
        print(f"{args.alg}: iterations={metrics.iterations} "
              f"converged={metrics.converged} final_objective={final!r} "
              f"wall_s={metrics.total_time:.3f}")
        if args.out:
            print(f"metrics written to {args.out}")
    else:
        print(f"rank {rank} finished {metrics.iterations} iterations")
    return 0


def _write_matrix(path: str, mat) -> None:
    if path.endswith(".csv"):
        write_csv_matrix(path, mat)
    else:
        write_dmat(path, mat)


def _read_matrix(path: str):
    if path.endswith(".csv"):
        return read_csv_matrix(path)
    return read_dmat(path)


def _cmd_synth(args) -> int:
    if args.rank > 0:
        mat = synth_lowrank(args.m, args.n, args.rank, args.seed)
    else:
        mat = synth_data(args.m, args.n, args.seed)
    _write_matrix(args.out, mat)
    print(f"wrote {mat.shape[0]}x{mat.shape[1]} matrix to {args.out}")
    return 0


def _cmd_convert(args) -> int:
    _write_matrix(args.dst, _read_matrix(args.src))
    print(f"converted {args.src} -> {args.dst}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "synth":
        return _cmd_synth(args)
    return _cmd_convert(args)


if __name__ == "__main__":
    sys.exit(main())

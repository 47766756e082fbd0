"""End-to-end run harness: data synthesis, initialization, run loop, metrics.

`run(config)` executes one algorithm until the stopping criterion
||E_t||_F^2 <= eps * ||E_0||_F^2 or an iteration/time cap, and returns
per-iteration metrics. Distributed algorithms place P ranks over the
in-process fabric (threads) or over TCP (one rank per process, driven by
`run_tcp_rank` or the NMF_RANK/NMF_WORLD/NMF_ADDR environment). Every
stop decision is made from allreduced quantities so all ranks always
take the same branch.
"""

from __future__ import annotations

import csv
import math
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .comm import allreduce_sum, make_inprocess_worlds, make_tcp_world
from .distributed import (
    DadmmWorkerState,
    dadmm_worker_iterate,
    dbcd_worker_iterate,
    did_worker_iterate,
)
from .kernels import (
    AdmmAuxState,
    FactorState,
    admm_iterate,
    anls_iterate,
    bcd_iterate,
    hals_iterate,
)
from .matrix import (
    as_matrix,
    frob_norm_sq,
    make_column_blocks,
    read_csv_matrix,
    read_dmat,
)

SEQUENTIAL_ALGS = ("hals", "bcd", "anls", "admm")
DISTRIBUTED_ALGS = ("dadmm", "dbcd", "did")
ALGORITHMS = SEQUENTIAL_ALGS + DISTRIBUTED_ALGS
TRANSPORTS = ("in-process", "tcp")
INIT_METHODS = ("scaled-random", "kmeans")

CSV_HEADER = ("iter", "objective", "residual_sq", "allreduce_calls",
              "bytes", "compute_s", "comm_s")


@dataclass
class RunConfig:
    """Everything needed to reproduce one run."""

    algorithm: str
    m: int = 0
    n: int = 0
    k: int = 1
    p: int = 1
    epsilon: float = 1e-6
    max_iters: int = 1000
    max_time: float = 600.0
    rho: float = 1.0
    seed: int = 0
    transport: str = "in-process"
    init: str = "scaled-random"
    input_path: str | None = None
    out_path: str | None = None
    tcp_address: tuple[str, int] = ("127.0.0.1", 29500)
    comm_timeout: float = 30.0

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; "
                             f"choose one of {ALGORITHMS}")
        if self.transport not in TRANSPORTS:
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.init not in INIT_METHODS:
            raise ValueError(f"unknown init method {self.init!r}")
        if self.input_path is None and (self.m < 1 or self.n < 1):
            raise ValueError("need positive m and n (or an input file)")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.p < 1:
            raise ValueError("p must be at least 1")
        if self.algorithm in SEQUENTIAL_ALGS and self.p != 1:
            raise ValueError(f"{self.algorithm} is sequential; use p=1")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.max_time <= 0.0:
            raise ValueError("max_time must be positive")
        if self.rho <= 0.0:
            raise ValueError("rho must be positive")


@dataclass
class IterRow:
    """Metrics for one completed iteration.

    `b_norm` is kept in memory for parity checks but never serialized.
    """

    iteration: int
    objective: float
    residual_sq: float
    allreduce_calls: int
    bytes: int
    compute_s: float
    comm_s: float
    b_norm: float = 0.0


@dataclass
class RunMetrics:
    """Per-iteration rows plus run-level outcome flags."""

    rows: list[IterRow] = field(default_factory=list)
    iterations: int = 0
    total_time: float = 0.0
    converged: bool = False

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.rows])

    def residuals(self) -> np.ndarray:
        return np.array([r.residual_sq for r in self.rows])

    def b_norms(self) -> np.ndarray:
        return np.array([r.b_norm for r in self.rows])

    def write_csv(self, path) -> None:
        # repr() gives shortest round-trip float text, so equal trajectories
        # serialize to byte-identical files on every transport
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_HEADER)
            for r in self.rows:
                writer.writerow([
                    r.iteration, repr(r.objective), repr(r.residual_sq),
                    r.allreduce_calls, r.bytes,
                    repr(r.compute_s), repr(r.comm_s),
                ])


def read_metrics_csv(path) -> list[dict]:
    """Read a metrics CSV back into a list of per-iteration dicts."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected metrics header in {path}")
        out = []
        for rec in reader:
            out.append({
                "iter": int(rec["iter"]),
                "objective": float(rec["objective"]),
                "residual_sq": float(rec["residual_sq"]),
                "allreduce_calls": int(rec["allreduce_calls"]),
                "bytes": int(rec["bytes"]),
                "compute_s": float(rec["compute_s"]),
                "comm_s": float(rec["comm_s"]),
            })
    return out


def synth_data(m: int, n: int, seed: int) -> np.ndarray:
    """Uniform [0, 1) data matrix, reproducible bit for bit from the seed.

    The stream is NumPy's Philox 4x64-10 counter generator keyed with
    SeedSequence([seed, 0]) and drawn row-major as float64. Philox is
    counter-based and platform independent, so any faithful
    implementation of the same generator reproduces the dataset from the
    seed alone.
    """
    if m < 1 or n < 1:
        raise ValueError("data dimensions must be positive")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0])))
    return np.asfortranarray(rng.random((m, n)))


def synth_lowrank(m: int, n: int, k: int, seed: int) -> np.ndarray:
    """Exactly rank-k data: a product of two uniform [0, 1) factors.

    Uses the Philox stream keyed with SeedSequence([seed, 2]), drawing the
    m x k factor first. An exact nonnegative rank-k fit exists, so solvers
    can actually reach tight relative-residual stopping thresholds.
    """
    if m < 1 or n < 1 or k < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 2])))
    left = rng.random((m, k))
    right = rng.random((k, n))
    return np.asfortranarray(left @ right)


def random_init_scale(X, k: int) -> float:
    """Scale for the uniform starting factors: sqrt(mean(X) / k)."""
    return math.sqrt(float(np.mean(X)) / k)


def init_factors(X, k: int, seed: int, method: str = "scaled-random"):
    """Deterministic starting factors, shared by every algorithm.

    scaled-random draws both factors uniform on [0, s) with
    s = sqrt(mean(X) / k), which keeps the initial product safely below
    the data scale so early residuals stay sign-mixed; kmeans runs
    Lloyd's method on the columns of X, takes centroids as B, and seeds C
    with smoothed one-hot assignment columns. The stream is Philox keyed
    with SeedSequence([seed, 1]); B is drawn before C.
    """
    X = np.asarray(X)
    m, n = X.shape
    if k > min(m, n):
        raise ValueError(f"k={k} exceeds min(m, n)={min(m, n)}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 1])))
    if method == "scaled-random":
        s = random_init_scale(X, k)
        B = np.asfortranarray(s * rng.random((m, k)))
        C = np.asfortranarray(s * rng.random((k, n)))
    elif method == "kmeans":
        B, C = _kmeans_init(X, k, rng)
    else:
        raise ValueError(f"unknown init method {method!r}")
    return B, C


def _kmeans_init(X, k: int, rng, sweeps: int = 50, smoothing: float = 0.1):
    """Lloyd's method on columns; dead centroids re-seed from the farthest point."""
    n = X.shape[1]
    centroids = np.array(X[:, rng.choice(n, size=k, replace=False)])
    assign = np.full(n, -1)
    for _ in range(sweeps):
        d2 = (np.sum(X * X, axis=0)[None, :]
              - 2.0 * (centroids.T @ X)
              + np.sum(centroids * centroids, axis=0)[:, None])
        new_assign = np.argmin(d2, axis=0)
        for c in range(k):
            members = new_assign == c
            if members.any():
                centroids[:, c] = X[:, members].mean(axis=1)
            else:
                farthest = int(np.argmax(np.min(d2, axis=0)))
                centroids[:, c] = X[:, farthest]
                new_assign[farthest] = c
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    C = np.full((k, n), smoothing)
    C[assign, np.arange(n)] += 1.0
    return (np.asfortranarray(np.maximum(centroids, 0.0)),
            np.asfortranarray(C))


def stopping_check(e_t_sq: float, e_0_sq: float, epsilon: float) -> bool:
    """Relative residual rule: ||E_t||^2 <= eps * ||E_0||^2.

    Compared in ratio form, which is scale-free and keeps exact decimal
    boundaries honest (eps * e0 can round below the boundary in binary).
    A run that starts with a zero residual is already converged.
    """
    if e_0_sq == 0.0:
        return True
    return e_t_sq / e_0_sq <= epsilon


def load_matrix(path) -> np.ndarray:
    """Load a data matrix by extension: .csv is text, anything else DMAT1."""
    if str(path).endswith(".csv"):
        return read_csv_matrix(path)
    return read_dmat(path)


def _get_data(config: RunConfig) -> np.ndarray:
    if config.input_path is not None:
        return as_matrix(load_matrix(config.input_path))
    return synth_data(config.m, config.n, config.seed)


def run(config: RunConfig, X=None) -> RunMetrics:
    """Execute one configured run and return its metrics.

    `X` overrides data loading (used by tests and scripts). For the tcp
    transport this delegates to `run_tcp_rank` with the rank taken from
    the NMF_RANK environment variable; rank 0 writes the CSV.
    """
    config.validate()
    if config.algorithm in DISTRIBUTED_ALGS and config.transport == "tcp":
        rank = _env_rank(config)
        return run_tcp_rank(config, rank, X=X)
    if X is None:
        X = _get_data(config)
    X = as_matrix(X)
    B0, C0 = init_factors(X, config.k, config.seed, config.init)
    if config.algorithm in SEQUENTIAL_ALGS:
        metrics = _run_sequential(config, X, B0, C0)
    else:
        metrics = _run_inprocess(config, X, B0, C0)
    if config.out_path:
        metrics.write_csv(config.out_path)
    return metrics


def _env_rank(config: RunConfig) -> int:
    if "NMF_RANK" not in os.environ:
        raise ValueError(
            "tcp transport needs NMF_RANK (and NMF_WORLD, NMF_ADDR) in the "
            "environment, or a direct call to run_tcp_rank")
    rank = int(os.environ["NMF_RANK"])
    world = int(os.environ.get("NMF_WORLD", config.p))
    if world != config.p:
        raise ValueError(f"NMF_WORLD={world} disagrees with p={config.p}")
    addr = os.environ.get("NMF_ADDR")
    if addr:
        host, _, port = addr.rpartition(":")
        config.tcp_address = (host or "127.0.0.1", int(port))
    return rank


def run_tcp_rank(config: RunConfig, rank: int, X=None) -> RunMetrics:
    """Run one TCP rank to completion; rank 0 writes the CSV if requested.

    Every rank loads (or synthesizes) the same data and initial factors
    deterministically, then works only on its own column block.
    """
    config.validate()
    if X is None:
        X = _get_data(config)
    X = as_matrix(X)
    B0, C0 = init_factors(X, config.k, config.seed, config.init)
    blocks = make_column_blocks(X, C0, config.p)
    world = make_tcp_world(rank, config.p, config.tcp_address,
                           timeout=config.comm_timeout)
    try:
        B = np.array(B0, order="F")
        metrics = _distributed_worker(config, world, blocks[rank], B)
    finally:
        world.close()
    if rank == 0 and config.out_path:
        metrics.write_csv(config.out_path)
    return metrics


def _run_sequential(config: RunConfig, X, B0, C0) -> RunMetrics:
    state = FactorState.from_factors(X, B0, C0)
    aux = (AdmmAuxState.from_state(state, config.rho)
           if config.algorithm == "admm" else None)
    e0 = frob_norm_sq(state.E)
    rows: list[IterRow] = []
    start = time.perf_counter()
    converged = stopping_check(e0, e0, config.epsilon)
    t = 0
    while not converged and t < config.max_iters:
        if time.perf_counter() - start > config.max_time:
            break
        t += 1
        tick = time.perf_counter()
        if config.algorithm == "hals":
            hals_iterate(X, state)
        elif config.algorithm == "bcd":
            bcd_iterate(X, state)
        elif config.algorithm == "anls":
            anls_iterate(X, state)
        else:
            admm_iterate(X, state, aux)
        compute_s = time.perf_counter() - tick
        resid = frob_norm_sq(state.E)
        rows.append(IterRow(
            iteration=t, objective=0.5 * resid, residual_sq=resid,
            allreduce_calls=0, bytes=0, compute_s=compute_s, comm_s=0.0,
            b_norm=math.sqrt(frob_norm_sq(state.B))))
        converged = stopping_check(resid, e0, config.epsilon)
    return RunMetrics(rows=rows, iterations=t,
                      total_time=time.perf_counter() - start,
                      converged=converged)


def _reduce_progress(world, local_resid: float, flag: float) -> tuple[float, float]:
    """Service reduction of (residual, time-cap flag); identical on all ranks."""
    out = allreduce_sum(world, np.array([local_resid, flag]), service=True)
    return float(out[0]), float(out[1])


def _distributed_worker(config: RunConfig, world, block, B) -> RunMetrics:
    alg = config.algorithm
    st = (DadmmWorkerState.fresh(block, B, config.rho)
          if alg == "dadmm" else None)
    stats = world.stats
    local = frob_norm_sq(block.x_block - B @ block.c_block)
    e0, _ = _reduce_progress(world, local, 0.0)
    rows: list[IterRow] = []
    start = time.perf_counter()
    converged = stopping_check(e0, e0, config.epsilon)
    t = 0
    while not converged and t < config.max_iters:
        t += 1
        tick = time.perf_counter()
        comm0 = stats.comm_wall_time
        calls0, bytes0 = stats.allreduce_calls, stats.bytes_sent
        if alg == "did":
            E, _ = did_worker_iterate(world, block, B)
            local = frob_norm_sq(E)
        elif alg == "dbcd":
            E, _ = dbcd_worker_iterate(world, block, B)
            local = frob_norm_sq(E)
        else:
            dadmm_worker_iterate(world, block, B, st)
            local = frob_norm_sq(block.x_block - B @ block.c_block)
        over_time = 1.0 if time.perf_counter() - start > config.max_time else 0.0
        resid, time_flag = _reduce_progress(world, local, over_time)
        comm_s = stats.comm_wall_time - comm0
        compute_s = time.perf_counter() - tick - comm_s
        stats.compute_wall_time += compute_s
        rows.append(IterRow(
            iteration=t, objective=0.5 * resid, residual_sq=resid,
            allreduce_calls=stats.allreduce_calls - calls0,
            bytes=stats.bytes_sent - bytes0,
            compute_s=compute_s, comm_s=comm_s,
            b_norm=math.sqrt(frob_norm_sq(B))))
        converged = stopping_check(resid, e0, config.epsilon)
        if time_flag > 0.0:
            break
    return RunMetrics(rows=rows, iterations=t,
                      total_time=time.perf_counter() - start,
                      converged=converged)


def _run_inprocess(config: RunConfig, X, B0, C0) -> RunMetrics:
    worlds = make_inprocess_worlds(config.p, timeout=config.comm_timeout)
    blocks = make_column_blocks(X, C0, config.p)
    results: list[RunMetrics | None] = [None] * config.p
    errors: list[BaseException | None] = [None] * config.p

    def work(rank: int) -> None:
        try:
            B = np.array(B0, order="F")  # replicated basis, one copy per rank
            results[rank] = _distributed_worker(
                config, worlds[rank], blocks[rank], B)
        except BaseException as exc:
            errors[rank] = exc

    threads = [threading.Thread(target=work, args=(r,), name=f"nmf-rank{r}")
               for r in range(config.p)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    for exc in errors:
        if exc is not None:
            raise exc
    return results[0]

"""Column-major dense matrix substrate shared by every solver.

Matrices are plain float64 numpy arrays kept in Fortran (column-major)
layout where it matters: the solvers walk data column by column, and a
column range of a Fortran array is a contiguous, copy-free view, which is
what lets a worker own a slab of X without duplicating it.

Two interchange formats are provided: a small binary one ("DMAT1", used
both on disk and on the wire) and plain CSV for small matrices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

DMAT_MAGIC = b"DMAT"
DMAT_VERSION = 1
# magic(4s) + version(u32) + rows(u64) + cols(u64), little-endian, packed
_DMAT_HEADER = struct.Struct("<4sIQQ")


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D float64 column-major array (copies only if needed)."""
    m = np.asfortranarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got {m.ndim} dimensions")
    return m


def frob_norm_sq(a) -> float:
    """Sum of squared entries (squared Frobenius norm)."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.vdot(a, a))


def matmul(a, b) -> np.ndarray:
    """Dense product a @ b with an explicit inner-dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def project_nonneg(a) -> np.ndarray:
    """Entrywise max(0, a); negative zero comes out as +0.0."""
    return np.maximum(np.asarray(a, dtype=np.float64), 0.0)


def partition_columns(n: int, p: int) -> list[tuple[int, int]]:
    """Split columns [0, n) into p contiguous (start, size) ranges.

    Sizes differ by at most one and the first n % p ranges carry the extra
    column. Every worker must own at least one column, so p > n is an error.
    """
    if n < 1 or p < 1:
        raise ValueError("partition_columns needs n >= 1 and p >= 1")
    if p > n:
        raise ValueError(f"cannot give {p} workers at least one of {n} columns")
    base, extra = divmod(n, p)
    ranges = []
    start = 0
    for r in range(p):
        size = base + (1 if r < extra else 0)
        ranges.append((start, size))
        start += size
    return ranges


@dataclass
class ColumnBlock:
    """One worker's contiguous slab of columns of X and C.

    `x_block` is a read-only view into the shared data matrix; `c_block`
    is owned (written) by exactly one worker.
    """

    owner_rank: int
    global_start: int
    local_cols: int
    x_block: np.ndarray
    c_block: np.ndarray


def make_column_blocks(X, C, p: int) -> list[ColumnBlock]:
    """Cut X (shared views) and C (per-block copies) into p worker blocks."""
    X = as_matrix(X)
    C = as_matrix(C)
    if X.shape[1] != C.shape[1]:
        raise ValueError(
            f"X and C disagree on column count: {X.shape[1]} vs {C.shape[1]}")
    blocks = []
    for rank, (start, size) in enumerate(partition_columns(X.shape[1], p)):
        blocks.append(ColumnBlock(
            owner_rank=rank,
            global_start=start,
            local_cols=size,
            x_block=X[:, start:start + size],
            c_block=np.array(C[:, start:start + size], order="F"),
        ))
    return blocks


def dmat_encode(a) -> bytes:
    """Serialize a matrix: 24-byte header, then float64 LE column-major body."""
    a = as_matrix(a)
    head = _DMAT_HEADER.pack(DMAT_MAGIC, DMAT_VERSION, a.shape[0], a.shape[1])
    return head + a.astype("<f8", copy=False).tobytes(order="F")


def dmat_decode(buf: bytes) -> np.ndarray:
    """Inverse of dmat_encode; validates magic, version, and payload length."""
    if len(buf) < _DMAT_HEADER.size:
        raise ValueError("truncated DMAT1 header")
    magic, version, rows, cols = _DMAT_HEADER.unpack_from(buf)
    if magic != DMAT_MAGIC:
        raise ValueError("bad DMAT1 magic")
    if version != DMAT_VERSION:
        raise ValueError(f"unsupported DMAT1 version {version}")
    expected = _DMAT_HEADER.size + 8 * rows * cols
    if len(buf) != expected:
        raise ValueError(
            f"DMAT1 payload length mismatch: have {len(buf)} bytes, "
            f"header implies {expected}")
    body = np.frombuffer(buf, dtype="<f8", offset=_DMAT_HEADER.size)
    return np.array(body.reshape((rows, cols), order="F"),
                    dtype=np.float64, order="F")


def write_dmat(path, a) -> None:
    with open(path, "wb") as f:
        f.write(dmat_encode(a))


def read_dmat(path) -> np.ndarray:
    with open(path, "rb") as f:
        return dmat_decode(f.read())


def write_csv_matrix(path, a) -> None:
    """Plain CSV, one matrix row per line, round-trip-exact float formatting."""
    np.savetxt(path, as_matrix(a), delimiter=",", fmt="%.17g")


def read_csv_matrix(path) -> np.ndarray:
    return as_matrix(np.loadtxt(path, delimiter=",", ndmin=2))

"""Nonnegative least squares in Gram form.

Every alternating-least-squares step in this package reduces to many
independent rows of the same quadratic program

    minimize_{b >= 0}   (1/2) b G b^T - b r^T

with one shared K x K symmetric positive semidefinite Gram matrix G and
per-row linear terms r (the rows of R). `nnls_rows` solves all rows at
once with block principal pivoting, grouping rows that share a passive
set so each K x K subsystem is factored once per group. `nnls_oracle`
solves small systems exactly by enumerating every active set; it exists
so the fast path can be audited against an independent reference.
"""

from __future__ import annotations

import numpy as np

KKT_TOL = 1e-8
ZERO_DIAG_TOL = 1e-12  # Gram diagonal below this marks a dead coordinate
_FEAS_TOL = 1e-12


class NnlsError(RuntimeError):
    """Solver hit its iteration cap; `best` carries the final iterate."""

    def __init__(self, message: str, best: np.ndarray):
        super().__init__(message)
        self.best = best


def row_objectives(G, R, B) -> np.ndarray:
    """Per-row objective (1/2) b G b^T - b r^T for each row b of B."""
    G = np.asarray(G, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    return (0.5 * np.einsum("ij,jk,ik->i", B, G, B)
            - np.einsum("ij,ij->i", B, R))


def _check_gram(G, R):
    G = np.asarray(G, dtype=np.float64)
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"Gram matrix must be square, got shape {G.shape}")
    if R.shape[1] != G.shape[0]:
        raise ValueError(
            f"linear terms have {R.shape[1]} columns but Gram is {G.shape[0]} wide")
    if not np.allclose(G, G.T, atol=1e-12, rtol=0.0):
        raise ValueError("Gram matrix must be symmetric")
    return G, R


def _solve_patterns(G, R, passive):
    """Solve G_FF b_F = r_F for every row, grouping rows by passive set."""
    B = np.zeros_like(R)
    if not passive.any():
        return B
    patterns, inverse = np.unique(passive, axis=0, return_inverse=True)
    for pid, pat in enumerate(patterns):
        if not pat.any():
            continue
        rows = np.nonzero(inverse == pid)[0]
        free = np.nonzero(pat)[0]
        sub = G[np.ix_(free, free)]
        rhs = R[np.ix_(rows, free)].T
        try:
            sol = np.linalg.solve(sub, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(sub, rhs, rcond=None)[0]
        B[np.ix_(rows, free)] = sol.T
    return B


def _kkt_violations(B, Y, kkt_tol):
    """Boolean row mask of KKT failures: b >= 0, gradient >= -tol, b.g <= tol."""
    comp = np.einsum("ij,ij->i", B, Y)
    return ((B < 0.0).any(axis=1)
            | (Y < -kkt_tol).any(axis=1)
            | (comp > kkt_tol))


def _projected_gradient(G, R, B0, kkt_tol, max_steps):
    """Fixed-step fallback; step 1/lambda_max(G) keeps every row monotone."""
    lam = float(np.linalg.eigvalsh(G)[-1])
    B = np.maximum(B0, 0.0)
    if lam <= 0.0:
        return B
    step = 1.0 / lam
    for _ in range(max_steps):
        Y = B @ G - R
        if not _kkt_violations(B, Y, kkt_tol).any():
            break
        B = np.maximum(B - step * Y, 0.0)
    return B


def _bpp_solve(G, R, kkt_tol):
    """Block principal pivoting with full exchange and a stall fallback."""
    n_rows, k = R.shape
    max_cycles = 100 * k
    stall_limit = 3 * k
    passive = np.ones((n_rows, k), dtype=bool)  # warm start: unconstrained solve
    B = _solve_patterns(G, R, passive)
    best_inf = np.full(n_rows, k + 1, dtype=np.int64)
    stall = np.zeros(n_rows, dtype=np.int64)
    pg_pool = np.zeros(n_rows, dtype=bool)
    for _ in range(max_cycles):
        Y = B @ G - R
        bad = (passive & (B < -_FEAS_TOL)) | (~passive & (Y < -_FEAS_TOL))
        bad[pg_pool] = False
        ninf = bad.sum(axis=1)
        live = ninf > 0
        if not live.any():
            break
        improved = ninf < best_inf
        stall[live & improved] = 0
        stall[live & ~improved] += 1
        np.minimum(best_inf, ninf, out=best_inf)
        stalled = live & (stall >= stall_limit)
        pg_pool |= stalled
        flips = bad & (live & ~stalled)[:, None]
        rows = np.nonzero(flips.any(axis=1))[0]
        if rows.size:
            passive[rows] ^= flips[rows]
            B[rows] = _solve_patterns(G, R[rows], passive[rows])
    else:
        Y = B @ G - R
        bad = (passive & (B < -_FEAS_TOL)) | (~passive & (Y < -_FEAS_TOL))
        pg_pool |= bad.any(axis=1)
    # tiny pivot negatives in passive coordinates are numerical zero
    B = np.maximum(B, 0.0)
    if pg_pool.any():
        idx = np.nonzero(pg_pool)[0]
        B[idx] = _projected_gradient(G, R[idx], B[idx], kkt_tol, max_cycles)
    return B


def nnls_rows(G, R, kkt_tol: float = KKT_TOL) -> np.ndarray:
    """Solve min_{b >= 0} (1/2) b G b^T - b r^T for every row r of R.

    Parameters
    ----------
    G : (K, K) symmetric PSD Gram matrix, shared by all rows.
    R : (M, K) linear terms, one row per independent problem.
    kkt_tol : float
        Acceptance threshold for the stationarity check: the gradient
        g = b G - r must satisfy g >= -kkt_tol and b . g <= kkt_tol.

    Returns
    -------
    (M, K) nonnegative solution matrix.

    Coordinates whose Gram diagonal is below ``ZERO_DIAG_TOL`` cannot
    influence the objective through G; they are dropped and returned as
    exact zeros. If any row fails the KKT check after the pivoting and
    projected-gradient budgets, ``NnlsError`` is raised carrying the
    best iterate found.
    """
    G, R = _check_gram(G, R)
    keep = np.diag(G) > ZERO_DIAG_TOL
    if not keep.all():
        out = np.zeros_like(R)
        if keep.any():
            sub = nnls_rows(G[np.ix_(keep, keep)], R[:, keep], kkt_tol)
            out[:, keep] = sub
        return out
    B = _bpp_solve(G, R, kkt_tol)
    bad = _kkt_violations(B, B @ G - R, kkt_tol)
    if bad.any():
        # rows that are sign-feasible but numerically off get a gradient polish
        idx = np.nonzero(bad)[0]
        B[idx] = _projected_gradient(G, R[idx], B[idx], kkt_tol,
                                     100 * G.shape[0])
        bad = _kkt_violations(B, B @ G - R, kkt_tol)
    if bad.any():
        raise NnlsError(
            f"{int(bad.sum())} of {R.shape[0]} rows missed the "
            f"{kkt_tol:g} KKT tolerance", B)
    return B


def nnls_oracle(G, R) -> np.ndarray:
    """Exact reference solver: enumerate every active set per row.

    Exponential in K (2^K candidate sets); refuses K > 12. For each row
    the feasible candidate with the smallest objective wins, with b = 0
    as the always-feasible baseline.
    """
    G, R = _check_gram(G, R)
    n_rows, k = R.shape
    if k > 12:
        raise ValueError("active-set enumeration is limited to K <= 12")
    best = np.zeros((n_rows, k))
    best_obj = np.zeros(n_rows)  # objective of the b = 0 candidate
    for mask in range(1, 1 << k):
        free = [i for i in range(k) if (mask >> i) & 1]
        sub = G[np.ix_(free, free)]
        rhs = R[:, free].T
        try:
            sol = np.linalg.solve(sub, rhs).T
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(sub, rhs, rcond=None)[0].T
        feasible = (sol >= -_FEAS_TOL).all(axis=1)
        cand = np.zeros((n_rows, k))
        cand[:, free] = np.maximum(sol, 0.0)
        obj = row_objectives(G, R, cand)
        take = feasible & (obj < best_obj)
        best[take] = cand[take]
        best_obj[take] = obj[take]
    return best

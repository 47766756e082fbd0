"""Sequential factorization kernels: HALS, coordinate descent, ANLS, ADMM.

All four minimize (1/2) ||X - B C||_F^2 over nonnegative B (M x K) and
C (K x N). The coordinate-descent sweeps double as the ground truth for
the distributed workers, which reuse the very same functions, so a
one-worker distributed run reproduces the sequential iterates bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .matrix import frob_norm_sq
from .nnls import nnls_rows

# squared-norm floor below which a closed-form update is skipped
DEGENERATE_NORM_TOL = 1e-12


@dataclass
class FactorState:
    """Factor pair plus the residual E = X - B C, maintained incrementally.

    `degenerate_events` counts skipped updates (a basis column or C row
    whose squared norm fell under ``DEGENERATE_NORM_TOL``).
    """

    B: np.ndarray
    C: np.ndarray
    E: np.ndarray
    degenerate_events: int = 0

    @classmethod
    def from_factors(cls, X, B, C) -> "FactorState":
        B = np.array(B, dtype=np.float64, order="F")
        C = np.array(C, dtype=np.float64, order="F")
        if B.ndim != 2 or C.ndim != 2 or B.shape[1] != C.shape[0]:
            raise ValueError(
                f"factor shapes do not chain: {B.shape} times {C.shape}")
        if X.shape != (B.shape[0], C.shape[1]):
            raise ValueError(
                f"data shape {X.shape} does not match factors "
                f"{(B.shape[0], C.shape[1])}")
        return cls(B=B, C=C, E=X - B @ C)

    def resync(self, X) -> None:
        """Recompute E from scratch, discarding incremental drift."""
        self.E = X - self.B @ self.C

    def objective(self) -> float:
        return 0.5 * frob_norm_sq(self.E)


def c_rowwise_sweep(E, C, B) -> int:
    """One coordinate pass over C: rows i = 0..K-1 in order, all columns at once.

    Distinct columns never interact inside the pass, so updating row i
    across every column together is exactly the per-column loop of
    c_ij := [b_i^T e_j / b_i^T b_i]_+ with e_j kept current through the
    add/subtract bracket. Returns the number of skipped (degenerate) rows.
    """
    events = 0
    for i in range(B.shape[1]):
        b = B[:, i]
        bb = float(b @ b)
        if bb < DEGENERATE_NORM_TOL:
            events += 1
            continue
        E += np.outer(b, C[i])
        C[i] = np.maximum((b @ E) / bb, 0.0)
        E -= np.outer(b, C[i])
    return events


def b_column_partials(E, C, B, i: int) -> tuple[np.ndarray, float]:
    """Open the bracket for basis column i and return its update sums.

    Folds the old column's contribution back into E, then returns
    y = sum_j e_j c_ij and z = ||c_i||^2. Must be paired with
    `b_column_apply`, which closes the bracket.
    """
    E += np.outer(B[:, i], C[i])
    return E @ C[i], float(C[i] @ C[i])


def b_column_apply(E, C, B, i: int, y, z: float) -> int:
    """Install b_i := [y / z]_+ and remove its contribution from E.

    A z below the degeneracy floor leaves the column untouched (the
    bracket opened by `b_column_partials` still gets closed). Returns the
    number of skipped updates, 0 or 1.
    """
    if z < DEGENERATE_NORM_TOL:
        E -= np.outer(B[:, i], C[i])
        return 1
    B[:, i] = np.maximum(y / z, 0.0)
    E -= np.outer(B[:, i], C[i])
    return 0


def bcd_update_c_element(state: FactorState, i: int, j: int) -> float:
    """Exact single-coordinate update of c_ij with residual maintenance."""
    b = state.B[:, i]
    bb = float(b @ b)
    if bb < DEGENERATE_NORM_TOL:
        state.degenerate_events += 1
        return float(state.C[i, j])
    e = state.E[:, j]
    e += b * state.C[i, j]
    cij = max(float(b @ e) / bb, 0.0)
    state.C[i, j] = cij
    e -= b * cij
    return cij


def bcd_update_b_column(state: FactorState, i: int) -> np.ndarray:
    """Closed-form update of basis column i against the current residual."""
    y, z = b_column_partials(state.E, state.C, state.B, i)
    state.degenerate_events += b_column_apply(state.E, state.C, state.B, i, y, z)
    return state.B[:, i]


def bcd_iterate(X, state: FactorState) -> FactorState:
    """One full sweep: every c_ij, then every basis column, in fixed order.

    The residual is refreshed from X at the top of each iteration so long
    runs cannot accumulate incremental drift.
    """
    state.resync(X)
    state.degenerate_events += c_rowwise_sweep(state.E, state.C, state.B)
    for i in range(state.B.shape[1]):
        bcd_update_b_column(state, i)
    return state


def hals_iterate(X, state: FactorState) -> FactorState:
    """One sweep of paired rank-one updates: basis column k, then row k of C.

    Each pair works on the deflated residual A_k = E + b_k c_k, minimizing
    over b_k first and then over c_k with the fresh b_k. X is unused; the
    residual is carried incrementally across iterations.
    """
    B, C, E = state.B, state.C, state.E
    for k in range(B.shape[1]):
        E += np.outer(B[:, k], C[k])
        cc = float(C[k] @ C[k])
        if cc >= DEGENERATE_NORM_TOL:
            B[:, k] = np.maximum((E @ C[k]) / cc, 0.0)
        else:
            state.degenerate_events += 1
        bb = float(B[:, k] @ B[:, k])
        if bb >= DEGENERATE_NORM_TOL:
            C[k] = np.maximum((B[:, k] @ E) / bb, 0.0)
        else:
            state.degenerate_events += 1
        E -= np.outer(B[:, k], C[k])
    return state


def anls_iterate(X, state: FactorState) -> FactorState:
    """Alternating exact nonnegative least squares: all of C, then all of B."""
    B = state.B
    state.C = np.asfortranarray(nnls_rows(B.T @ B, X.T @ B).T)
    C = state.C
    state.B = np.asfortranarray(nnls_rows(C @ C.T, X @ C.T))
    state.resync(X)
    return state


@dataclass
class AdmmAuxState:
    """Splitting variables and scaled multipliers for the ADMM kernel.

    Waux/Haux are the unconstrained copies of B/C; Phi/Psi the multipliers
    on the coupling constraints B = Waux and C = Haux.
    """

    Waux: np.ndarray
    Haux: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    rho: float

    @classmethod
    def from_state(cls, state: FactorState, rho: float = 1.0) -> "AdmmAuxState":
        if rho <= 0.0:
            raise ValueError("rho must be positive")
        return cls(
            Waux=state.B.copy(),
            Haux=state.C.copy(),
            Phi=np.zeros_like(state.B),
            Psi=np.zeros_like(state.C),
            rho=float(rho),
        )


def admm_iterate(X, state: FactorState, aux: AdmmAuxState) -> FactorState:
    """One pass of the six splitting updates: W, H, B, C, then multipliers.

    Both least-squares subproblems are SPD (Gram + rho I), solved by
    Cholesky factorization.
    """
    rho = aux.rho
    k = state.B.shape[1]
    ridge = rho * np.eye(k)
    H = aux.Haux
    # W-step is a right-hand solve; transpose since the system is symmetric
    factor = cho_factor(H @ H.T + ridge, lower=True)
    aux.Waux = cho_solve(factor, (X @ H.T + aux.Phi + rho * state.B).T).T
    W = aux.Waux
    factor = cho_factor(W.T @ W + ridge, lower=True)
    aux.Haux = cho_solve(factor, W.T @ X + aux.Psi + rho * state.C)
    H = aux.Haux
    state.B = np.maximum(W - aux.Phi / rho, 0.0)
    state.C = np.maximum(H - aux.Psi / rho, 0.0)
    aux.Phi = aux.Phi + rho * (state.B - W)
    aux.Psi = aux.Psi + rho * (state.C - H)
    state.resync(X)
    return state

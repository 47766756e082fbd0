import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from didnmf.nnls import (
    KKT_TOL,
    NnlsError,
    nnls_oracle,
    nnls_rows,
    row_objectives,
)


def random_psd(k, rng, extra_rows=2):
    a = rng.normal(size=(k + extra_rows, k))
    return a.T @ a


def kkt_residuals(G, R, B):
    """(max negative gradient, max complementarity) over all rows."""
    Y = B @ G - R
    comp = np.einsum("ij,ij->i", B, Y)
    return float(np.max(-Y, initial=0.0)), float(np.max(comp, initial=0.0))


# oracle first: the enumeration solver must be right before anything else
# leans on it


def test_oracle_identity_gram():
    G = np.eye(2)
    R = np.array([[1.0, -1.0]])
    assert np.allclose(nnls_oracle(G, R), [[1.0, 0.0]])


def test_oracle_coupled_gram():
    G = np.array([[2.0, 1.0], [1.0, 2.0]])
    R = np.array([[1.0, 1.0]])
    assert np.allclose(nnls_oracle(G, R), [[1.0 / 3.0, 1.0 / 3.0]], atol=1e-14)


def test_oracle_all_negative_linear_term():
    G = np.eye(3)
    R = np.array([[-1.0, -2.0, -0.5]])
    assert np.array_equal(nnls_oracle(G, R), [[0.0, 0.0, 0.0]])


def test_oracle_beats_random_feasible_points():
    rng = np.random.default_rng(10)
    for _ in range(20):
        k = int(rng.integers(1, 5))
        G = random_psd(k, rng)
        R = rng.normal(size=(3, k))
        best = nnls_oracle(G, R)
        best_obj = row_objectives(G, R, best)
        for _ in range(50):
            cand = rng.uniform(0, 2, size=(3, k))
            assert (row_objectives(G, R, cand) >= best_obj - 1e-9).all()


def test_oracle_refuses_large_k():
    with pytest.raises(ValueError):
        nnls_oracle(np.eye(13), np.ones((1, 13)))


# fast path


def test_nnls_rows_matches_oracle_examples():
    G = np.eye(2)
    R = np.array([[1.0, -1.0]])
    assert np.allclose(nnls_rows(G, R), [[1.0, 0.0]])
    G = np.array([[2.0, 1.0], [1.0, 2.0]])
    R = np.array([[1.0, 1.0]])
    assert np.allclose(nnls_rows(G, R), [[1.0 / 3.0, 1.0 / 3.0]], atol=1e-12)


def test_nnls_rows_scalar_gram():
    G = np.array([[4.0]])
    R = np.array([[8.0], [-8.0], [0.0]])
    assert np.allclose(nnls_rows(G, R), [[2.0], [0.0], [0.0]])


def test_nnls_rows_matches_oracle_randomized():
    rng = np.random.default_rng(11)
    for _ in range(100):
        k = int(rng.integers(1, 7))
        rows = int(rng.integers(1, 9))
        G = random_psd(k, rng)
        R = rng.normal(size=(rows, k)) * rng.choice([0.5, 1.0, 5.0])
        fast = nnls_rows(G, R)
        ref = nnls_oracle(G, R)
        obj_fast = row_objectives(G, R, fast)
        obj_ref = row_objectives(G, R, ref)
        scale = np.maximum(np.abs(obj_ref), 1e-12)
        assert (np.abs(obj_fast - obj_ref) / scale <= 1e-8).all()
        grad_neg, comp = kkt_residuals(G, R, fast)
        assert grad_neg <= KKT_TOL
        assert comp <= KKT_TOL
        assert (fast >= 0.0).all()


def test_nnls_rows_drops_zero_diagonal_coordinates():
    G = np.array([[2.0, 0.0, 0.0],
                  [0.0, 0.0, 0.0],
                  [0.0, 0.0, 3.0]])
    R = np.array([[4.0, 7.0, 6.0], [1.0, -2.0, -3.0]])
    out = nnls_rows(G, R)
    assert np.allclose(out, [[2.0, 0.0, 2.0], [0.5, 0.0, 0.0]])


def test_nnls_rows_all_dead_gram():
    out = nnls_rows(np.zeros((2, 2)), np.ones((3, 2)))
    assert np.array_equal(out, np.zeros((3, 2)))


def test_nnls_rows_rejects_asymmetric_gram():
    with pytest.raises(ValueError):
        nnls_rows(np.array([[1.0, 0.5], [0.2, 1.0]]), np.ones((1, 2)))


def test_nnls_rows_shape_validation():
    with pytest.raises(ValueError):
        nnls_rows(np.eye(2), np.ones((3, 4)))
    with pytest.raises(ValueError):
        nnls_rows(np.ones((2, 3)), np.ones((3, 3)))


def test_nnls_error_carries_best_iterate():
    err = NnlsError("cap", np.ones((2, 2)))
    assert err.best.shape == (2, 2)


def test_nnls_rows_ill_conditioned_gram():
    # heavily ridged rank-1 Gram (condition ~1e6) still meets the KKT bar
    rng = np.random.default_rng(12)
    a = rng.normal(size=(1, 3))
    G = a.T @ a + 1e-6 * np.eye(3)
    R = rng.normal(size=(5, 3))
    out = nnls_rows(G, R)
    grad_neg, comp = kkt_residuals(G, R, out)
    assert (out >= 0.0).all()
    assert grad_neg <= KKT_TOL and comp <= KKT_TOL


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 100.0))
@settings(max_examples=60, deadline=None)
def test_nnls_positive_homogeneity(seed, alpha):
    # scaling R by alpha > 0 scales the solution by alpha (G fixed)
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 5))
    G = random_psd(k, rng)
    R = rng.normal(size=(4, k))
    base = nnls_rows(G, R)
    scaled = nnls_rows(G, alpha * R)
    assert np.allclose(scaled, alpha * base, rtol=1e-7, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_nnls_solution_feasible_and_stationary(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 6))
    G = random_psd(k, rng)
    R = rng.normal(size=(int(rng.integers(1, 12)), k))
    out = nnls_rows(G, R)
    assert (out >= 0.0).all()
    grad_neg, comp = kkt_residuals(G, R, out)
    assert grad_neg <= KKT_TOL and comp <= KKT_TOL

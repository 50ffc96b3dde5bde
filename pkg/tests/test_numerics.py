import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linconn.errors import NumericalError, PreconditionError
from linconn.numerics import matmul, sym_eig


def random_symmetric(n, seed):
    a = np.random.default_rng(seed).normal(size=(n, n))
    return a + a.T


def test_identity():
    e = sym_eig(np.eye(2))
    np.testing.assert_array_equal(e.eigenvalues, [1.0, 1.0])
    np.testing.assert_allclose(e.eigenvectors.T @ e.eigenvectors, np.eye(2), atol=1e-15)


def test_diagonal():
    e = sym_eig(np.diag([3.0, 0.0]))
    np.testing.assert_array_equal(e.eigenvalues, [3.0, 0.0])
    np.testing.assert_array_equal(e.eigenvectors, np.eye(2))


def test_diagonal_unsorted_is_sorted_descending():
    e = sym_eig(np.diag([1.0, 5.0, -2.0]))
    np.testing.assert_array_equal(e.eigenvalues, [5.0, 1.0, -2.0])
    np.testing.assert_array_equal(e.eigenvectors, np.eye(3)[:, [1, 0, 2]])


def test_random_5x5_reconstruction():
    a = random_symmetric(5, 0)
    e = sym_eig(a)
    assert np.linalg.norm(e.reconstruct() - a) / np.linalg.norm(a) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 64), seed=st.integers(0, 2**32 - 1))
def test_orthonormal_and_reconstructs(n, seed):
    a = random_symmetric(n, seed)
    e = sym_eig(a)
    v = e.eigenvectors
    assert np.linalg.norm(v.T @ v - np.eye(n)) <= 1e-10
    assert np.linalg.norm(e.reconstruct() - a) <= 1e-8 * np.linalg.norm(a)
    assert np.all(np.diff(e.eigenvalues) <= 0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 40), samples=st.integers(1, 80), seed=st.integers(0, 2**32 - 1))
def test_psd_gram_matrices_have_nonnegative_spectrum(n, samples, seed):
    x = np.random.default_rng(seed).normal(size=(samples, n))
    e = sym_eig(x.T @ x / samples)
    assert e.eigenvalues.min() >= -1e-10


def test_agrees_with_lapack_spectrum():
    a = random_symmetric(30, 5)
    np.testing.assert_allclose(sym_eig(a).eigenvalues, np.linalg.eigvalsh(a)[::-1], atol=1e-10)


def test_deterministic_and_sign_convention():
    a = random_symmetric(12, 9)
    e1, e2 = sym_eig(a), sym_eig(a.copy())
    np.testing.assert_array_equal(e1.eigenvalues, e2.eigenvalues)
    np.testing.assert_array_equal(e1.eigenvectors, e2.eigenvectors)
    for col in e1.eigenvectors.T:
        first = col[np.abs(col) > 1e-12][0]
        assert first > 0


def test_rank_deficient_zero_eigenvalues():
    x = np.random.default_rng(2).normal(size=(3, 8))
    e = sym_eig(x.T @ x)
    assert np.all(np.abs(e.eigenvalues[3:]) < 1e-12 * e.eigenvalues[0])


def test_zero_matrix():
    e = sym_eig(np.zeros((4, 4)))
    np.testing.assert_array_equal(e.eigenvalues, np.zeros(4))
    np.testing.assert_array_equal(e.eigenvectors, np.eye(4))


@pytest.mark.parametrize("bad", [np.ones((2, 3)), np.array([[1.0, 2.0], [0.0, 1.0]]), np.array([[np.nan]])])
def test_rejects_bad_input(bad):
    with pytest.raises(PreconditionError):
        sym_eig(bad)


def test_iteration_cap_raises():
    with pytest.raises(NumericalError):
        sym_eig(random_symmetric(10, 1), max_sweeps=1)


def test_matmul_identity_and_hand_case():
    a = np.random.default_rng(0).normal(size=(3, 3))
    np.testing.assert_array_equal(matmul(np.eye(3), a), a)
    np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2.0], [4.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(11)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))
    expected = np.zeros((4, 2))
    for i in range(4):
        for j in range(2):
            for k in range(3):
                expected[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(a, b), expected, rtol=1e-15, atol=1e-15)


def test_matmul_shape_mismatch():
    with pytest.raises(PreconditionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))

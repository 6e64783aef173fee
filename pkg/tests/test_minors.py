import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from itertools import combinations

from msct_ddd.errors import InvalidInputError, SizeLimitError
from msct_ddd.minors import (PClass, assemble_G, cauchy_binet_det, cauchy_binet_terms, classify_p_matrix,
                             index_set, minor, principal_minor_G, subsets)
from msct_ddd.spectral import SpectralModel, attenuation_factors


def laplace_det(A):
    """Cofactor expansion along the first row; independent of LU."""
    n = len(A)
    if n == 1:
        return A[0][0]
    total = 0.0
    for j in range(n):
        sub = [row[:j] + row[j + 1:] for row in A[1:]]
        total += (-1) ** j * A[0][j] * laplace_det(sub)
    return total


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def test_minor_closed_forms():
    assert minor(np.eye(3), (1, 3), (1, 3)) == 1.0
    assert minor([[1, 2], [3, 4]], (1, 2), (1, 2)) == -2.0


def test_minor_rejects_mismatched_sets():
    with pytest.raises(InvalidInputError):
        minor(np.eye(3), (1, 2), (1,))
    with pytest.raises(InvalidInputError):
        minor(np.eye(3), (2, 1), (1, 2))
    with pytest.raises(InvalidInputError):
        minor(np.eye(3), (1, 4), (1, 2))


def test_three_minors_match_cofactor_oracle():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(5, 7))
    for rows in combinations(range(1, 6), 3):
        for cols in combinations(range(1, 8), 3):
            sub = A[np.ix_([r - 1 for r in rows], [c - 1 for c in cols])].tolist()
            ref = laplace_det(sub)
            assert abs(minor(A, rows, cols) - ref) <= 1e-12 * max(abs(ref), 1.0)


def test_larger_minors_match_cofactor_oracle():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(6, 6))
    assert rel(minor(A, range(1, 6), (1, 2, 3, 5, 6)), laplace_det(A[np.ix_([0, 1, 2, 3, 4], [0, 1, 2, 4, 5])].tolist())) < 1e-12


def test_cauchy_binet_padded_identity():
    A = np.hstack([np.eye(2), np.zeros((2, 2))])
    assert cauchy_binet_det(A, A) == 1.0


def test_cauchy_binet_appendix(model1, model2):
    for m in (model1, model2):
        S = m.S
        assert rel(cauchy_binet_det(S, m.B), np.linalg.det(S @ m.B.T)) < 1e-12


def test_cauchy_binet_rejects_wide():
    with pytest.raises(InvalidInputError):
        cauchy_binet_det(np.ones((3, 2)), np.ones((3, 2)))


@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(0, 5))
def test_cauchy_binet_identity(seed, K, extra):
    rng = np.random.default_rng(seed)
    M = K + extra
    A, Bm = rng.normal(size=(K, M)), rng.normal(size=(K, M))
    ref = np.linalg.det(A @ Bm.T)
    assert abs(cauchy_binet_det(A, Bm) - ref) <= 1e-10 * max(abs(ref), np.linalg.norm(A) ** K * np.linalg.norm(Bm) ** K * 1e-6)


def test_principal_minor_expansion_cases(identity_model, model1):
    x = np.array([0.3, -1.2])
    z = attenuation_factors(identity_model, x)
    assert rel(principal_minor_G(identity_model, x, (1, 2)), z[0] * z[1]) < 1e-15
    zeta = attenuation_factors(model1, x)
    assert rel(principal_minor_G(model1, x, (1,)), float(np.sum(model1.S[0] * zeta * model1.B[0]))) < 1e-13
    G = assemble_G(model1, [0.5, 0.1])
    assert rel(principal_minor_G(model1, [0.5, 0.1], (1, 2)), np.linalg.det(G)) < 1e-12
    with pytest.raises(InvalidInputError):
        principal_minor_G(model1, x, ())


@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(0, 5))
def test_principal_minor_G_matches_assembled(seed, K, extra):
    rng = np.random.default_rng(seed)
    M = K + extra
    S = rng.uniform(0.01, 1, (K, M))
    B = rng.uniform(0.1, 3, (K, M))
    m = SpectralModel(S, B)
    x = rng.uniform(-1, 2, K)
    G = assemble_G(m, x)
    for size in range(1, K + 1):
        for alpha in subsets(K, size):
            ref = np.linalg.det(G[np.ix_([a - 1 for a in alpha], [a - 1 for a in alpha])])
            assert abs(principal_minor_G(m, x, alpha) - ref) <= 1e-10 * max(abs(ref), 1e-300)


def test_classify_examples():
    assert classify_p_matrix(np.eye(3)) is PClass.P
    assert classify_p_matrix([[1, 2], [2, 1]]) is PClass.NEITHER
    assert classify_p_matrix([[1, 1], [0, 0]]) is PClass.NEITHER
    assert classify_p_matrix([[1, 0], [0, 1e-3]]) is PClass.P
    assert classify_p_matrix([[0, -1], [1, 0]]) is PClass.WEAK_P


def test_classify_size_limit():
    classify_p_matrix(np.eye(12))
    with pytest.raises(SizeLimitError):
        classify_p_matrix(np.eye(13))


@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_p_property_is_hereditary(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    A += np.diag(np.abs(A).sum(axis=1) + 0.1)  # strictly diagonally dominant, positive diagonal
    assert classify_p_matrix(A) is PClass.P
    for size in range(1, n):
        for alpha in subsets(n, size):
            idx = [a - 1 for a in alpha]
            assert classify_p_matrix(A[np.ix_(idx, idx)]) is PClass.P


def test_index_set_and_terms():
    assert index_set([1, 4], 4) == (1, 4)
    with pytest.raises(InvalidInputError):
        index_set([0, 1], 4)
    terms = cauchy_binet_terms(np.eye(2, 3), np.eye(2, 3))
    assert [b for b, _ in terms] == [(1, 2), (1, 3), (2, 3)]

"""Minors, Cauchy-Binet sums and P-matrix classification.

Index sets are 1-based throughout this module and in every report built on it,
so ``(1, 14)`` names the first and last energy bins.
"""

from __future__ import annotations

import enum
from itertools import combinations
from math import prod

import numpy as np

from .errors import InvalidInputError, SizeLimitError
from .spectral import attenuation_factors

P_MATRIX_MAX_SIZE = 12


def index_set(values, n):
    """Validate and normalize a 1-based index set drawn from {1..n}."""
    idx = tuple(int(v) for v in values)
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise InvalidInputError(f"index set {idx} must be strictly increasing")
    if idx and (idx[0] < 1 or idx[-1] > n):
        raise InvalidInputError(f"index set {idx} out of range 1..{n}")
    return idx


def subsets(n, size):
    """All index sets of the given size from {1..n}, lexicographic."""
    return list(combinations(range(1, n + 1), size))


def det(A):
    """Determinant with closed forms up to 3x3 and LU (partial pivoting) beyond."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise InvalidInputError(f"determinant of non-square {A.shape} matrix")
    if n == 0:
        return 1.0
    if n == 1:
        return float(A[0, 0])
    if n == 2:
        return float(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
    if n == 3:
        return float(
            A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
            - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
            + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0])
        )
    return float(np.linalg.det(A))


def minor(A, rows, cols):
    A = np.asarray(A, dtype=float)
    rows = index_set(rows, A.shape[0])
    cols = index_set(cols, A.shape[1])
    if len(rows) != len(cols) or not rows:
        raise InvalidInputError(f"minor needs equal, non-empty index sets, got {rows} and {cols}")
    return det(A[np.ix_([r - 1 for r in rows], [c - 1 for c in cols])])


def cauchy_binet_terms(A, Bm, rows=None):
    """``[(beta, det(A[rows, beta]) * det(Bm[rows, beta]))]`` over all beta with #beta = #rows."""
    A = np.asarray(A, dtype=float)
    Bm = np.asarray(Bm, dtype=float)
    if A.shape[1] != Bm.shape[1]:
        raise InvalidInputError("A and Bm need the same number of columns")
    rows = tuple(range(1, A.shape[0] + 1)) if rows is None else tuple(rows)
    size, M = len(rows), A.shape[1]
    if size > M:
        raise InvalidInputError(f"need #rows <= M, got {size} > {M}")
    return [(beta, minor(A, rows, beta) * minor(Bm, rows, beta)) for beta in subsets(M, size)]


def cauchy_binet_det(A, Bm):
    """sum over #beta = K of det(A[<K>, beta]) det(Bm[<K>, beta]), which equals det(A Bm^T)."""
    A = np.asarray(A, dtype=float)
    Bm = np.asarray(Bm, dtype=float)
    if A.shape != Bm.shape:
        raise InvalidInputError(f"shape mismatch {A.shape} vs {Bm.shape}")
    K, M = A.shape
    if K > M:
        raise InvalidInputError(f"Cauchy-Binet needs K <= M, got K={K}, M={M}")
    return sum(p for _, p in cauchy_binet_terms(A, Bm))


def principal_minor_G(model, x, alpha):
    """det(G(x)[alpha]) for G(x) = S diag(zeta(x)) B^T, expanded over energy-bin subsets."""
    alpha = index_set(alpha, model.Q)
    if not alpha:
        raise InvalidInputError("alpha must be non-empty")
    zeta = attenuation_factors(model, x)
    total = 0.0
    for beta, p in cauchy_binet_terms(model.S, model.B, alpha):
        total += prod(zeta[i - 1] for i in beta) * p
    return total


def assemble_G(model, x):
    zeta = attenuation_factors(model, x)
    return (model.S * zeta) @ model.B.T


class PClass(str, enum.Enum):
    P = "P"
    WEAK_P = "weak-P"
    NEITHER = "neither"


def principal_minors(A):
    """``{alpha: det(A[alpha])}`` for every non-empty alpha."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    return {alpha: minor(A, alpha, alpha) for size in range(1, n + 1) for alpha in subsets(n, size)}


def classify_p_matrix(A, tol=None):
    """Classify a square matrix as P, weak-P or neither.

    ``tol`` defaults to ``1e-12 * ||A||_F**k`` for a k x k minor, so the sign test
    scales with the magnitude a minor of that size can reach.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.ndim != 2 or A.shape != (n, n):
        raise InvalidInputError(f"expected a square matrix, got {A.shape}")
    if n > P_MATRIX_MAX_SIZE:
        raise SizeLimitError(f"{n}x{n} needs {2**n - 1} principal minors; limit is n <= {P_MATRIX_MAX_SIZE}")
    scale = np.linalg.norm(A) or 1.0

    def tol_for(size):
        return tol if tol is not None else 1e-12 * scale**size

    minors = principal_minors(A)
    if all(v > tol_for(len(a)) for a, v in minors.items()):
        return PClass.P
    full = tuple(range(1, n + 1))
    others_ok = all(v >= -tol_for(len(a)) for a, v in minors.items() if a != full)
    if minors[full] > tol_for(n) and others_ok:
        return PClass.WEAK_P
    return PClass.NEITHER

"""Spectral data model: spectra ``S`` (Q x M), MACs ``B`` (K x M) and the map F.

F_q(x) = ln sum_m s_qm exp(-sum_k b_km x_k).  All evaluation functions accept a
single K-vector or a stack ``(..., K)`` of them; rays are independent, so every
output entry depends only on its own input row.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .appendix import BUILTINS, builtin_table
from .errors import InvalidInputError, ModelValidationError, NumericDomainError

DEFAULT_ZERO_THRESHOLD = 1e-8
DEFAULT_DELTA_E = 10.0  # keV per bin; labeling only


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Normalized spectra and basis MACs on a common set of energy bins.

    Rows of ``S`` are divided by their sums on construction, so
    ``S.sum(axis=1) == 1`` up to rounding. ``zero_threshold`` only affects the
    condition checks (see :meth:`condition_spectra`), never forward evaluation.
    """

    S: np.ndarray
    B: np.ndarray
    delta_E: float = DEFAULT_DELTA_E
    zero_threshold: float = DEFAULT_ZERO_THRESHOLD
    spectrum_names: tuple = ()
    material_names: tuple = ()
    positive_mac: bool = True  # False admits B >= 0, for closed-form toy models such as B = I
    _log_S: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        S = np.array(self.S, dtype=float)
        B = np.array(self.B, dtype=float)
        if S.ndim != 2 or B.ndim != 2:
            raise ModelValidationError("S and B must be 2-D matrices")
        Q, M = S.shape
        K, MB = B.shape
        if MB != M:
            raise ModelValidationError(f"S has {M} energy bins but B has {MB}")
        if Q != K:
            raise ModelValidationError(f"need Q == K, got Q={Q}, K={K}")
        if Q > M:
            raise ModelValidationError(f"need Q <= M, got Q={Q}, M={M}")
        if not (np.all(np.isfinite(S)) and np.all(np.isfinite(B))):
            raise ModelValidationError("S and B must be finite")
        if np.any(S < 0):
            raise ModelValidationError("spectra must be non-negative")
        if np.any(B <= 0) if self.positive_mac else np.any(B < 0):
            raise ModelValidationError("MACs must be strictly positive" if self.positive_mac
                                       else "MACs must be non-negative")
        dead = np.flatnonzero(~np.any(S > 0, axis=0))
        if dead.size:
            raise ModelValidationError(
                f"spectra vanish at energy bin(s) {(dead + 1).tolist()} for every spectrum"
            )
        if np.any(S.sum(axis=1) <= 0):
            raise ModelValidationError("every spectrum needs positive total weight")
        if self.zero_threshold < 0:
            raise ModelValidationError("zero_threshold must be >= 0")
        S = S / S.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            log_S = np.log(S)
        object.__setattr__(self, "S", _readonly(S))
        object.__setattr__(self, "B", _readonly(B))
        object.__setattr__(self, "_log_S", _readonly(log_S))
        spec_names = tuple(self.spectrum_names) or tuple(f"spectrum{q + 1}" for q in range(Q))
        mat_names = tuple(self.material_names) or tuple(f"material{k + 1}" for k in range(K))
        if len(spec_names) != Q or len(mat_names) != K:
            raise ModelValidationError("name lists do not match matrix shapes")
        object.__setattr__(self, "spectrum_names", spec_names)
        object.__setattr__(self, "material_names", mat_names)

    @property
    def Q(self):
        return self.S.shape[0]

    @property
    def K(self):
        return self.B.shape[0]

    @property
    def M(self):
        return self.S.shape[1]

    def bin_energy(self, m):
        """keV label of 1-based bin ``m``."""
        return self.delta_E * m

    def condition_spectra(self):
        """``S`` with entries <= zero_threshold set to exactly zero."""
        return np.where(self.S <= self.zero_threshold, 0.0, self.S)

    def with_threshold(self, eps):
        return SpectralModel(self.S, self.B, self.delta_E, eps, self.spectrum_names, self.material_names,
                             self.positive_mac)


def _check_x(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (model.K,):
        raise InvalidInputError(f"expected trailing dimension {model.K}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("x must be finite")
    return x


def _exponents(model, x):
    # -(B^T x)_m, written as an explicit sum over k so each ray's value is
    # bitwise independent of how many rays are evaluated together
    a = -x[..., 0, None] * model.B[0]
    for k in range(1, model.K):
        a = a - x[..., k, None] * model.B[k]
    return a


def _log_terms(model, x):
    """log(s_qm * zeta_m(x)), shape (..., Q, M); -inf where s_qm == 0."""
    return model._log_S + _exponents(model, x)[..., None, :]


def _lse(t):
    c = np.max(t, axis=-1, keepdims=True)
    total = np.sum(np.exp(t - c), axis=-1)
    return c[..., 0] + np.log(total)


def _rowsum(w):
    acc = w[0].copy()
    for row in w[1:]:
        acc += row
    return acc


def _evaluate(model, x, jac=True):
    """F and D F for rays ``x`` of shape (N, K), energy bins on the leading axis.

    Sums over bins are explicit running sums of length-N rows, so the
    addition order is fixed and each ray's result is independent of N (a
    numpy axis reduction would switch to pairwise summation when N == 1).
    """
    N = x.shape[0]
    xt = x.T
    a = -model.B[0][:, None] * xt[0]
    for k in range(1, model.K):
        a = a - model.B[k][:, None] * xt[k]
    F = np.empty((N, model.Q))
    J = np.empty((N, model.Q, model.K)) if jac else None
    for q in range(model.Q):
        sup = np.flatnonzero(model.S[q] > 0)
        t = a[sup]
        c = np.max(t, axis=0)
        w = model.S[q, sup][:, None] * np.exp(t - c)
        total = _rowsum(w)
        F[:, q] = c + np.log(total)
        if jac:
            for k in range(model.K):
                J[:, q, k] = -_rowsum(model.B[k, sup][:, None] * w) / total
    return F, J


def attenuation_factors(model, x):
    """zeta_m(x) = exp(-sum_k b_km x_k); may underflow to 0 for long paths."""
    x = _check_x(model, x)
    return np.exp(_exponents(model, x))


def forward_map(model, x):
    """F(x) with a per-spectrum log-sum-exp shift over the spectrum's support."""
    x = _check_x(model, x)
    F, _ = _evaluate(model, x.reshape(-1, model.K), jac=False)
    if not np.all(np.isfinite(F)):
        raise NumericDomainError("log-sum-exp produced a non-finite value")
    return F.reshape(x.shape[:-1] + (model.Q,))


def forward_and_jacobian(model, x):
    """``(F(x), DF(x))`` from one pass over the exponentials."""
    x = _check_x(model, x)
    F, J = _evaluate(model, x.reshape(-1, model.K))
    if not np.all(np.isfinite(F)):
        raise NumericDomainError("log-sum-exp produced a non-finite value")
    lead = x.shape[:-1]
    return F.reshape(lead + (model.Q,)), J.reshape(lead + (model.Q, model.K))


def weighted_spectra(model, x):
    """Rows s_qm zeta_m / <s_q, zeta>; each row sums to one."""
    x = _check_x(model, x)
    t = _log_terms(model, x)
    return np.exp(t - _lse(t)[..., None])


def jacobian(model, x):
    """D F(x) = -S~(x) B^T, shape (..., Q, K)."""
    return forward_and_jacobian(model, x)[1]


def jacobian_factors(model, x):
    """``(Lambda, G)`` with D F = -Lambda @ G; direct evaluation, no shifting."""
    x = _check_x(model, x)
    zeta = np.exp(_exponents(model, x))
    G = model.S @ np.diag(zeta) @ model.B.T
    Lam = np.diag(1.0 / (model.S @ zeta))
    return Lam, G


# ---------------------------------------------------------------- loading

def read_table_csv(path):
    """Read a ``bin,<name1>,<name2>,...`` table; returns ``(names, matrix)`` with one row per name."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise InvalidInputError(f"{path}: empty table")
    header = [h.strip() for h in rows[0]]
    if header[0].lower() != "bin" or len(header) < 2:
        raise InvalidInputError(f"{path}: header must be 'bin,<name1>,...'")
    try:
        body = np.array([[float(c) for c in r[1:]] for r in rows[1:]], dtype=float)
        bins = [int(float(r[0])) for r in rows[1:]]
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    if body.ndim != 2 or body.shape[1] != len(header) - 1:
        raise InvalidInputError(f"{path}: ragged rows")
    if bins != list(range(1, len(bins) + 1)):
        raise InvalidInputError(f"{path}: bins must be numbered 1..M in order")
    return tuple(header[1:]), body.T


def load_table(source):
    """A built-in name (``spectra1``, ``spectra2``, ``mac-water-bone``) or a CSV path."""
    if str(source) in BUILTINS:
        return builtin_table(str(source))
    return read_table_csv(source)


def load_model(spectra="spectra1", mac="mac-water-bone", *, zero_threshold=DEFAULT_ZERO_THRESHOLD,
               delta_E=DEFAULT_DELTA_E):
    spec_names, S = load_table(spectra)
    mat_names, B = load_table(mac)
    return SpectralModel(S, B, delta_E=delta_E, zero_threshold=zero_threshold,
                         spectrum_names=spec_names, material_names=mat_names)

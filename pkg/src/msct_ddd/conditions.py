"""Checkable existence, uniqueness and stability conditions for F.

All sign tests run on the thresholded spectra ``model.condition_spectra()``
(entries <= ``zero_threshold`` treated as exact zeros). Every verdict carries
the index sets that decided it. Bins, spectra and materials are 1-based.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError, UnsupportedCaseError
from .minors import cauchy_binet_terms, det, subsets
from .spectral import _exponents, forward_map

RATIO_TIE_RTOL = 1e-12
_LOG_FLOAT_MAX = math.log(np.finfo(float).max)


def product_tolerance(S, B, size):
    """Absolute tolerance for the sign of det(S[a,b]) det(B[a,b]) with #a = size."""
    scale = (np.linalg.norm(S) * np.linalg.norm(B)) ** size
    return 1e-12 * (scale or 1.0)


def m_index_set(B, k, l):
    """Energy bins maximizing b_km / b_lm (ties within 1e-12 relative all kept)."""
    B = np.asarray(B, dtype=float)
    K = B.shape[0]
    if k == l:
        raise InvalidInputError("m_index_set needs k != l")
    if not (1 <= k <= K and 1 <= l <= K):
        raise InvalidInputError(f"material indices must lie in 1..{K}")
    ratio = B[k - 1] / B[l - 1]
    top = ratio.max()
    return tuple(int(m) + 1 for m in np.flatnonzero(ratio >= top * (1 - RATIO_TIE_RTOL)))


@dataclass
class LocalHomeoVerdict:
    passed: bool
    orientation: str | None  # "non-negative" | "non-positive"
    det_SBt: float
    failing_betas: list = field(default_factory=list)


@dataclass
class ProperVerdict:
    passed: bool
    witnesses: dict  # "k,l" -> q or None
    m_sets: dict  # "k,l" -> bins
    violating: dict  # "k,l" -> {"m0": bin or None, "blocking": {q: [bins with s > eps]}}
    zeroed_columns: list  # bins whose every spectrum entry is <= eps


@dataclass
class InjectivityVerdict:
    passed: bool
    route: str | None  # "full-minor-sign" | "dect-local-homeo"
    full_minor_sign: bool
    dect_route: bool | None
    failing_pairs: list = field(default_factory=list)


@dataclass
class GammaResult:
    gamma: float
    log_gamma: float
    beta: tuple
    x: list
    omega: list
    grid: int
    kept_betas: int


@dataclass
class ConditionReport:
    det_SBt: float
    sign_pattern_full: list
    local_homeo: LocalHomeoVerdict
    proper_dect: ProperVerdict | None
    homeomorphism: bool | None
    global_injective: InjectivityVerdict
    gamma: GammaResult | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def sign_pattern_full(model):
    """``[(beta, det(S[<Q>,beta]) det(B[<Q>,beta]))]`` in lexicographic beta order."""
    return cauchy_binet_terms(model.condition_spectra(), model.B)


def check_local_homeo(model):
    S = model.condition_spectra()
    terms = cauchy_binet_terms(S, model.B)
    tol = product_tolerance(S, model.B, model.Q)
    d = det(S @ model.B.T)
    nonneg = all(p >= -tol for _, p in terms)
    nonpos = all(p <= tol for _, p in terms)
    if nonneg and nonpos:
        orientation = "non-negative" if d >= 0 else "non-positive"
    elif nonneg:
        orientation = "non-negative"
    elif nonpos:
        orientation = "non-positive"
    else:
        orientation = None
    if orientation is None:
        sign = 1.0 if d >= 0 else -1.0
        failing = [list(b) for b, p in terms if sign * p < -tol]
    else:
        failing = []
    passed = abs(d) > tol and orientation is not None
    return LocalHomeoVerdict(passed, orientation, d, failing)


def _require_dect(model):
    if model.Q != 2:
        raise UnsupportedCaseError(f"properness criterion covers Q = K = 2 only, got Q = {model.Q}")


def check_proper_dect(model):
    _require_dect(model)
    S = model.condition_spectra()
    witnesses, m_sets, violating = {}, {}, {}
    for k, l in ((1, 2), (2, 1)):
        key = f"{k},{l}"
        ms = m_index_set(model.B, k, l)
        m_sets[key] = list(ms)
        cols = [m - 1 for m in ms]
        ok = [q for q in range(model.Q) if np.all(S[q, cols] == 0.0)]
        if ok:
            # prefer the spectrum that vanishes most decisively on M(k,l)
            q_best = min(ok, key=lambda q: (float(np.max(model.S[q, cols])), q))
            witnesses[key] = q_best + 1
        else:
            witnesses[key] = None
            m0 = [m for m in ms if np.all(S[:, m - 1] > 0)]
            violating[key] = {
                "m0": m0[0] if m0 else None,
                "blocking": {str(q + 1): [m for m in ms if S[q, m - 1] > 0] for q in range(model.Q)},
            }
    zeroed = [int(m) + 1 for m in np.flatnonzero(np.all(S == 0.0, axis=0))]
    passed = all(v is not None for v in witnesses.values())
    return ProperVerdict(passed, witnesses, m_sets, violating, zeroed)


def check_homeomorphism(model):
    _require_dect(model)
    return check_local_homeo(model).passed and check_proper_dect(model).passed


def check_global_injectivity(model):
    S = model.condition_spectra()
    B = model.B
    d = det(S @ B.T)
    failing = []
    for size in range(1, model.Q + 1):
        tol = product_tolerance(S, B, size)
        for alpha in subsets(model.Q, size):
            for beta, p in cauchy_binet_terms(S, B, alpha):
                if p < -tol:
                    failing.append({"alpha": list(alpha), "beta": list(beta), "product": p})
    full = abs(d) > product_tolerance(S, B, model.Q) and not failing
    dect = check_local_homeo(model).passed if model.Q == 2 else None
    if full:
        route = "full-minor-sign"
    elif dect:
        route = "dect-local-homeo"
    else:
        route = None
    return InjectivityVerdict(route is not None, route, full, dect, failing)


def jacobian_slogdet(model, x):
    """``(sign, log|det D F(x)|)`` from the Cauchy-Binet expansion of det G(x).

    det D F = (-1)^Q det(G) / prod_q <s_q, zeta>, and det G = sum_beta
    prod zeta_beta * p_beta. When every p_beta shares one sign the sum is
    evaluated as a log-sum-exp without cancellation, so the determinant stays
    resolvable where forming D F and factorizing it rounds to exactly zero.
    """
    x = np.asarray(x, dtype=float)
    terms = [(beta, p) for beta, p in cauchy_binet_terms(model.S, model.B) if p != 0.0]
    expo = _exponents(model, x)
    logs = np.stack([expo[..., [i - 1 for i in beta]].sum(axis=-1) + math.log(abs(p)) for beta, p in terms], -1)
    signs = np.array([math.copysign(1.0, p) for _, p in terms])
    c = logs.max(axis=-1, keepdims=True)
    total = np.sum(signs * np.exp(logs - c), axis=-1)
    with np.errstate(divide="ignore"):
        log_det_G = c[..., 0] + np.log(np.abs(total))
    sign = np.sign(total) * (-1.0) ** model.Q
    return sign, log_det_G - forward_map(model, x).sum(axis=-1)


def _grid_points(lo, hi, grid):
    axes = [np.linspace(a, b, grid) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def stability_gamma(model, lo, hi, grid=64, *, require_conditions=True):
    """Stability constant over the box [lo, hi] with the minimum taken on a uniform grid.

    gamma = Q^(Q/2) max|b| / (min_{beta, x} prod_{i in beta} zeta_i(x) / prod_q <s_q, zeta(x)>) / |det(S B^T)|

    Evaluated in the log domain. The minimum runs over bin sets beta whose minor
    product does not vanish (after thresholding): vanishing terms drop out of
    the Cauchy-Binet sum for det D F(x), so excluding them keeps the bound valid.
    ``gamma`` is ``inf`` when the value exceeds the float range; ``log_gamma``
    is always finite.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != (model.K,) or hi.shape != (model.K,):
        raise InvalidInputError(f"omega bounds need {model.K} entries each")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or np.any(hi < lo):
        raise InvalidInputError("omega must be a bounded box with lo <= hi")
    if grid < 2:
        raise InvalidInputError("grid needs at least 2 samples per axis")
    if require_conditions:
        ok = check_global_injectivity(model).passed
        if not ok and model.Q == 2:
            ok = check_homeomorphism(model)
        if not ok:
            raise InvalidInputError("stability constant requires the injectivity conditions to hold")

    S = model.condition_spectra()
    Q = model.Q
    tol = product_tolerance(S, model.B, Q)
    kept = [beta for beta, p in cauchy_binet_terms(S, model.B) if abs(p) > tol]
    abs_det = abs(det(S @ model.B.T))

    pts = _grid_points(lo, hi, grid)
    expo = _exponents(model, pts)  # log zeta, (P, M)
    log_den = forward_map(model, pts).sum(axis=-1)
    best, best_beta, best_x = math.inf, None, None
    for beta in kept:
        vals = expo[:, [i - 1 for i in beta]].sum(axis=-1) - log_den
        j = int(np.argmin(vals))  # first minimum: lexicographic (beta, x) tie-break
        if vals[j] < best:
            best, best_beta, best_x = float(vals[j]), beta, pts[j]
    assert math.isfinite(best), "non-finite ratio on a bounded box"
    log_gamma = 0.5 * Q * math.log(Q) + math.log(float(np.max(np.abs(model.B)))) - best - math.log(abs_det)
    gamma = math.exp(log_gamma) if log_gamma < _LOG_FLOAT_MAX else math.inf
    return GammaResult(gamma, log_gamma, best_beta, best_x.tolist(),
                       [[float(a), float(b)] for a, b in zip(lo, hi)], int(grid), len(kept))


def condition_report(model, omega=None, grid=64):
    """Run every checker; ``omega`` is an optional ``(lo, hi)`` box for gamma."""
    lh = check_local_homeo(model)
    if model.Q == 2:
        proper = check_proper_dect(model)
        homeo = lh.passed and proper.passed
    else:
        proper, homeo = None, None
    inj = check_global_injectivity(model)
    gamma = None
    if omega is not None and (inj.passed or homeo):
        gamma = stability_gamma(model, omega[0], omega[1], grid, require_conditions=False)
    pattern = [{"beta": list(b), "product": p} for b, p in sign_pattern_full(model)]
    meta = {
        "Q": model.Q, "M": model.M, "zero_threshold": model.zero_threshold,
        "spectra": list(model.spectrum_names), "materials": list(model.material_names),
        "gamma_beta_range": "beta over energy bins with #beta = Q and non-vanishing minor product",
    }
    return ConditionReport(lh.det_SBt, pattern, lh, proper, homeo, inj, gamma, meta)


def nonproper_ray(model, k1, k2, r):
    """Point r * (-e_k1 + bbar e_k2) along which F stays bounded when properness fails."""
    ms = m_index_set(model.B, k1, k2)
    bbar = model.B[k1 - 1, ms[0] - 1] / model.B[k2 - 1, ms[0] - 1]
    x = np.zeros(model.K)
    x[k1 - 1] = -r
    x[k2 - 1] = r * bbar
    return x


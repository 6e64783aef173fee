"""Per-ray inversion of the spectral data model by the ordinary Newton method.

Rays are independent: every routine here works on stacks ``(N, K)`` / ``(N, Q)``
and each output row depends only on its own input row. Batches are split into
fixed-size chunks, so thread count never changes a single bit of the result.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidInputError, SingularJacobianError
from .spectral import _check_x, forward_and_jacobian, forward_map, jacobian

log = logging.getLogger(__name__)

OK, SINGULAR, DIVERGED = 0, 1, 2
SINGULAR_RTOL = 1e-13
RAYS_PER_CHUNK = 4096


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 100
    residual_tol: float = 0.0  # 0 runs every iteration
    initial_point: str = "zero"
    divergence_cap: float = 1e6
    on_failure: str = "reset"  # failed rays report the initial point ("reset") or their last iterate ("keep")

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if not self.residual_tol >= 0:
            raise InvalidInputError("residual_tol must be >= 0")
        if self.initial_point != "zero":
            raise InvalidInputError(f"unknown initial_point policy {self.initial_point!r}")
        if not self.divergence_cap > 0:
            raise InvalidInputError("divergence_cap must be positive")
        if self.on_failure not in ("reset", "keep"):
            raise InvalidInputError("on_failure must be 'reset' or 'keep'")

    def to_dict(self):
        return {"max_iters": int(self.max_iters), "residual_tol": float(self.residual_tol),
                "initial_point": self.initial_point, "divergence_cap": float(self.divergence_cap),
                "on_failure": self.on_failure}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"max_iters", "residual_tol", "initial_point", "divergence_cap", "on_failure"}
        if unknown:
            raise InvalidInputError(f"unknown solver fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class DecomposeResult:
    x: np.ndarray  # (N, K)
    re_history: np.ndarray | None  # (max_iters,), entry n-1 is RE after iteration n
    iterations: np.ndarray  # (N,) steps taken per ray
    residual: np.ndarray  # (N,) final ||F(x) - g||
    status: np.ndarray  # (N,) 0 ok, 1 singular Jacobian, 2 diverged
    failures: list = field(default_factory=list)

    @property
    def n_failed(self):
        return int(np.count_nonzero(self.status))


def _as_rays(a, width, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[None]
    if a.ndim != 2 or a.shape[1] != width:
        raise InvalidInputError(f"{name} must have shape (N, {width}), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} must be finite")
    return a


def generate_data(model, basis_sinograms):
    """g_j = F(x_j); keeps the leading shape, e.g. ``(n_views, n_bins, K) -> (..., Q)``."""
    x = _check_x(model, basis_sinograms)
    return forward_map(model, x)


def realized_snr(g, noisy):
    g = np.asarray(g, dtype=float)
    n = np.asarray(noisy, dtype=float) - g
    return 10.0 * math.log10(float(np.sum(g * g)) / float(np.sum(n * n)))


def add_noise(data, snr_db, seed):
    """White Gaussian noise rescaled so that 10 log10(sum g^2 / sum n^2) == snr_db."""
    g = np.asarray(data, dtype=float)
    if not math.isfinite(snr_db):
        raise InvalidInputError("snr_db must be finite")
    power = float(np.sum(g * g))
    if power == 0.0:
        raise InvalidInputError("SNR is undefined for all-zero data")
    n = np.random.default_rng(seed).standard_normal(g.shape)
    n *= math.sqrt(power / 10.0 ** (snr_db / 10.0) / float(np.sum(n * n)))
    return g + n


def _singular(J):
    scale = np.linalg.norm(J, axis=(-2, -1)) ** J.shape[-1]
    d = np.linalg.det(J)
    return np.abs(d) <= SINGULAR_RTOL * np.where(scale > 0, scale, 1.0), d


def _direction(J, r):
    """``(dx, bad)`` with J dx = r; rows flagged ``bad`` (numerically singular) get dx = 0.

    The 2 x 2 case uses Cramer's rule, elementwise per ray.
    """
    if J.shape[-1] != 2:
        bad, _ = _singular(J)
        J = J.copy()
        J[bad] = np.eye(J.shape[-1])
        dx = np.linalg.solve(J, r[..., None])[..., 0]
        dx[bad] = 0.0
        return dx, bad
    a, b, c, d = J[:, 0, 0], J[:, 0, 1], J[:, 1, 0], J[:, 1, 1]
    det = a * d - b * c
    scale = a * a + b * b + c * c + d * d
    bad = ~(np.abs(det) > SINGULAR_RTOL * np.where(scale > 0, scale, 1.0))
    safe = np.where(bad, 1.0, det)
    dx = np.empty_like(r)
    dx[:, 0] = (d * r[:, 0] - b * r[:, 1]) / safe
    dx[:, 1] = (a * r[:, 1] - c * r[:, 0]) / safe
    dx[bad] = 0.0
    return dx, bad


def newton_step(model, x, g, divergence_cap=1e6):
    """One step x + dx where -DF(x) dx = F(x) - g."""
    x = _check_x(model, x)
    g = np.asarray(g, dtype=float)
    F, J = forward_and_jacobian(model, x)
    bad, d = _singular(J)
    if bad:
        raise SingularJacobianError(x, float(d))
    x_new = x - np.linalg.solve(J, F - g)
    if not np.linalg.norm(x_new) <= divergence_cap:
        raise DivergenceError(x_new, divergence_cap)
    return x_new


def _solve_chunk(model, g, truth, cfg):
    N = g.shape[0]
    x = np.zeros((N, model.K))
    status = np.zeros(N, dtype=np.int8)
    active = np.ones(N, dtype=bool)
    iters = np.zeros(N, dtype=np.int64)
    sq_err = np.empty((cfg.max_iters, N)) if truth is not None else None
    tol = cfg.residual_tol
    for n in range(cfg.max_iters):
        if active.any():
            xa = x[active]
            Fa, J = forward_and_jacobian(model, xa)
            r = Fa - g[active]
            if tol > 0:
                done = np.linalg.norm(r, axis=-1) <= tol
                idx = np.flatnonzero(active)
                active[idx[done]] = False
                xa, r, J = xa[~done], r[~done], J[~done]
            idx = np.flatnonzero(active)
            if idx.size:
                dx, bad = _direction(J, r)
                x_new = xa - dx
                blown = ~bad & ~(np.linalg.norm(x_new, axis=-1) <= cfg.divergence_cap)
                step = ~bad & ~blown
                x[idx[step]] = x_new[step]
                iters[idx[step]] += 1
                status[idx[bad]] = SINGULAR
                status[idx[blown]] = DIVERGED
                active[idx[~step]] = False
                if cfg.on_failure == "reset":
                    x[idx[~step]] = 0.0
        if sq_err is not None:
            sq_err[n] = np.sum((x - truth) ** 2, axis=-1)
    residual = np.linalg.norm(forward_map(model, x) - g, axis=-1)
    return x, iters, residual, status, sq_err


def _chunks(N, size):
    return [slice(s, min(s + size, N)) for s in range(0, N, size)]


def decompose(model, data, truth=None, cfg=None, threads=1, chunk_size=RAYS_PER_CHUNK):
    """Invert F ray by ray; ``data`` is ``(..., Q)``, the output keeps that leading shape flattened to ``(N, K)``.

    With ``truth`` the relative error sum_j ||x_j^n - x_j*||^2 / sum_j ||x_j*||^2
    is recorded after every iteration. Rays that hit a singular Jacobian or the
    divergence cap stop iterating and are flagged in ``status``; their estimate
    falls back to the initial point unless ``cfg.on_failure == "keep"``.
    """
    cfg = cfg or SolverConfig()
    g = _as_rays(np.reshape(data, (-1, model.Q)), model.Q, "data")
    t = None
    if truth is not None:
        t = _as_rays(np.reshape(truth, (-1, model.K)), model.K, "truth")
        if t.shape[0] != g.shape[0]:
            raise InvalidInputError("truth and data have different ray counts")
    parts = _chunks(g.shape[0], int(chunk_size))

    def run(s):
        return _solve_chunk(model, g[s], None if t is None else t[s], cfg)

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(run, parts))
    else:
        out = [run(s) for s in parts]

    x = np.concatenate([o[0] for o in out])
    iters = np.concatenate([o[1] for o in out])
    residual = np.concatenate([o[2] for o in out])
    status = np.concatenate([o[3] for o in out])
    history = None
    if t is not None:
        sq_err = np.concatenate([o[4] for o in out], axis=1)  # (iters, N) in ray order
        denom = float(np.sum(np.sum(t * t, axis=-1)))
        if denom == 0.0:
            raise InvalidInputError("relative error undefined for an all-zero truth")
        history = np.array([float(np.sum(row)) for row in sq_err]) / denom
    failures = [{"ray": int(j), "status": int(status[j]), "iterations": int(iters[j])}
                for j in np.flatnonzero(status)]
    if failures:
        log.warning("%d of %d rays failed", len(failures), len(status))
    return DecomposeResult(x, history, iters, residual, status, failures)


def polish(model, data, x0, steps=20, cfg=None):
    """Continue Newton from ``x0`` to a fixed point; used as F^-1 of the data."""
    cfg = cfg or SolverConfig()
    g = _as_rays(np.reshape(data, (-1, model.Q)), model.Q, "data")
    x = _as_rays(np.reshape(x0, (-1, model.K)), model.K, "x0").copy()
    for _ in range(steps):
        F, J = forward_and_jacobian(model, x)
        dx, _ = _direction(J, F - g)
        x = x - dx
    return x


def reference_inverse(model, data, x0=None, max_iters=200, tol=1e-15):
    """F^-1(g) by Newton with backtracking on ||F(x) - g||.

    A reference for the error split only: rays where the ordinary iteration
    breaks down still have a well-defined inverse, and this finds it. Full
    steps are taken whenever they reduce the residual, so from a converged
    ordinary-Newton point it behaves like :func:`polish`.
    """
    g = _as_rays(np.reshape(data, (-1, model.Q)), model.Q, "data")
    x = np.zeros((g.shape[0], model.K)) if x0 is None else \
        _as_rays(np.reshape(x0, (-1, model.K)), model.K, "x0").copy()
    r = forward_map(model, x) - g
    nr = np.linalg.norm(r, axis=-1)
    for _ in range(max_iters):
        act = np.flatnonzero(nr > tol)
        if not act.size:
            break
        J = jacobian(model, x[act])
        d, bad = _direction(J, r[act])
        d = -d
        # steepest descent where the Jacobian is numerically singular
        d[bad] = -np.einsum("nqk,nq->nk", J[bad], r[act][bad])
        t = np.ones(act.size)
        pending = np.ones(act.size, dtype=bool)
        for _ in range(60):
            if not pending.any():
                break
            p = np.flatnonzero(pending)
            trial = x[act[p]] + t[p, None] * d[p]
            rt = forward_map(model, trial) - g[act[p]]
            nt = np.linalg.norm(rt, axis=-1)
            ok = nt <= (1.0 - 1e-4 * t[p]) * nr[act[p]]
            acc = act[p[ok]]
            x[acc], r[acc], nr[acc] = trial[ok], rt[ok], nt[ok]
            pending[p[ok]] = False
            t[p[~ok]] *= 0.5
        if pending.all():
            break  # no ray made progress: at the rounding floor
    return x


@dataclass
class ErrorSplit:
    error1: np.ndarray
    error2: np.ndarray
    total: np.ndarray  # ||x~^n - x*||
    bound: np.ndarray  # error1 + gamma * error2
    holds: np.ndarray
    gamma: float

    @property
    def fraction_holding(self):
        return float(np.mean(self.holds))

    def summary(self):
        return {"gamma": self.gamma, "rays": int(self.holds.size),
                "fraction_holding": self.fraction_holding,
                "max_error1": float(self.error1.max()), "max_error2": float(self.error2.max()),
                "max_total": float(self.total.max())}


def error_split(x_n, noisy_solution, clean_data, noisy_data, gamma, truth):
    """Per-ray split ||x~^n - x*|| <= ||x~^n - F^-1(g~)|| + gamma ||g~ - g||.

    ``noisy_solution`` stands in for F^-1(g~) and ``truth`` is x*.
    """
    if noisy_solution is None:
        raise InvalidInputError("error split needs the converged noisy solution")
    xn = np.reshape(np.asarray(x_n, dtype=float), (-1, np.shape(x_n)[-1]))
    xs = np.reshape(np.asarray(noisy_solution, dtype=float), xn.shape)
    xt = np.reshape(np.asarray(truth, dtype=float), xn.shape)
    g = np.asarray(clean_data, dtype=float)
    gt = np.asarray(noisy_data, dtype=float)
    g = np.reshape(g, (xn.shape[0], -1))
    gt = np.reshape(gt, g.shape)
    e1 = np.linalg.norm(xn - xs, axis=-1)
    e2 = np.linalg.norm(gt - g, axis=-1)
    total = np.linalg.norm(xn - xt, axis=-1)
    with np.errstate(invalid="ignore", over="ignore"):
        bound = e1 + np.where(e2 == 0.0, 0.0, gamma * e2)
    holds = total <= bound
    return ErrorSplit(e1, e2, total, bound, holds, float(gamma))


def write_re_csv(path, history):
    with open(path, "w") as fh:
        fh.write("iteration,re\n")
        for n, v in enumerate(history, start=1):
            fh.write(f"{n},{float(v)!r}\n")

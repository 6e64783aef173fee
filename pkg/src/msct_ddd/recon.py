"""Filtered backprojection of basis sinograms and virtual monochromatic images."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

FILTERS = ("ram-lak", "hann")
VIEWS_PER_CHUNK = 16


@dataclass(frozen=True)
class FbpConfig:
    filter: str = "ram-lak"
    interpolation: str = "linear"
    grid: object = None  # ImageGrid; None means the scan's own grid

    def __post_init__(self):
        if self.filter not in FILTERS:
            raise InvalidInputError(f"filter must be one of {FILTERS}, got {self.filter!r}")
        if self.interpolation != "linear":
            raise InvalidInputError("only linear interpolation is supported")

    def to_dict(self):
        d = {"filter": self.filter, "interpolation": self.interpolation}
        if self.grid is not None:
            d["grid"] = self.grid.to_dict()
        return d


def _pad_length(n_bins):
    return 1 << int(np.ceil(np.log2(2 * n_bins)))


def ramp_kernel(n_pad, dt):
    """Band-limited ramp sampled in space, wrapped for circular convolution of length n_pad."""
    n = np.arange(n_pad)
    n = np.where(n > n_pad // 2, n - n_pad, n)
    h = np.zeros(n_pad)
    h[n == 0] = 1.0 / (4.0 * dt * dt)
    odd = n % 2 == 1
    h[odd] = -1.0 / (np.pi * n[odd] * dt) ** 2
    return h


def filter_response(n_bins, dt, kind="ram-lak"):
    n_pad = _pad_length(n_bins)
    H = np.real(np.fft.fft(ramp_kernel(n_pad, dt))) * dt
    if kind == "hann":
        H = H * 0.5 * (1.0 + np.cos(2.0 * np.pi * np.fft.fftfreq(n_pad)))
    elif kind != "ram-lak":
        raise InvalidInputError(f"unknown filter {kind!r}")
    return H


def filter_sinogram(sino, dt, kind="ram-lak"):
    sino = np.asarray(sino, dtype=float)
    n_bins = sino.shape[-1]
    H = filter_response(n_bins, dt, kind)
    P = np.fft.fft(sino, n=H.size, axis=-1)
    return np.real(np.fft.ifft(P * H, axis=-1))[..., :n_bins]


def fbp_reconstruct(sinogram, geom, cfg=None, threads=1):
    """Ramp-filter each view, then backproject with linear interpolation in t.

    Pixel (x, y) reads detector coordinate ``t = x cos(phi) + y sin(phi)``,
    the same convention as the projector. Rays outside the detector read 0.
    """
    cfg = cfg or FbpConfig()
    sino = np.asarray(sinogram, dtype=float)
    if sino.shape != geom.sino_shape:
        raise InvalidInputError(f"sinogram shape {sino.shape} does not match {geom.sino_shape}")
    grid = cfg.grid or geom.grid
    q = filter_sinogram(sino, geom.dt, cfg.filter)
    X, Y = grid.centers()
    xs, ys = X.ravel(), Y.ravel()
    phis = geom.angles()
    t_axis = geom.bin_centers()
    chunks = [range(v, min(v + VIEWS_PER_CHUNK, geom.n_views))
              for v in range(0, geom.n_views, VIEWS_PER_CHUNK)]

    def partial(views):
        acc = np.zeros(xs.size)
        for v in views:
            t = xs * np.cos(phis[v]) + ys * np.sin(phis[v])
            acc += np.interp(t, t_axis, q[v], left=0.0, right=0.0)
        return acc

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(partial, chunks))
    else:
        parts = [partial(c) for c in chunks]
    out = np.zeros(xs.size)
    for p in parts:
        out += p
    return (out * (np.pi / geom.n_views)).reshape(grid.shape)


def synthesize_vmi(model, basis_images, bin):
    """mu_m = sum_k b_km f_k at 1-based energy bin ``bin``."""
    imgs = [np.asarray(f, dtype=float) for f in basis_images]
    if len(imgs) != model.K:
        raise InvalidInputError(f"need {model.K} basis images, got {len(imgs)}")
    if any(f.shape != imgs[0].shape for f in imgs):
        raise InvalidInputError("basis images are on different grids")
    if not 1 <= int(bin) <= model.M:
        raise InvalidInputError(f"energy bin {bin} outside 1..{model.M}")
    b = model.B[:, int(bin) - 1]
    mu = b[0] * imgs[0]
    for k in range(1, model.K):
        mu = mu + b[k] * imgs[k]
    return mu


def rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))

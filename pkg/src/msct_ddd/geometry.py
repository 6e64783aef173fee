"""Parallel-beam geometry and the intersection-length projector.

Ray convention, used by both the projector and FBP: view ``v`` has angle
``phi = v * pi / n_views``; detector bin ``b`` sits at its bin center ``t``;
the ray passes through ``t * (cos phi, sin phi)`` with direction
``(-sin phi, cos phi)``. Images are arrays of shape ``(ny, nx)`` indexed
``[iy, ix]`` with ``iy = 0`` at ``ymin``; pixel ``i = iy * nx + ix``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError

_SNAP = 1e-15


@dataclass(frozen=True)
class ImageGrid:
    nx: int
    ny: int
    xmin: float = -5.0
    xmax: float = 5.0
    ymin: float = -5.0
    ymax: float = 5.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise InvalidInputError("grid needs at least one pixel per axis")
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise InvalidInputError("grid extent is degenerate")
        if not math.isclose(self.dx, self.dy, rel_tol=1e-9):
            raise InvalidInputError(f"pixels must be square, got {self.dx} x {self.dy}")

    @property
    def dx(self):
        return (self.xmax - self.xmin) / self.nx

    @property
    def dy(self):
        return (self.ymax - self.ymin) / self.ny

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def size(self):
        return self.nx * self.ny

    def centers(self):
        """Pixel-center coordinate arrays ``(X, Y)`` of shape ``(ny, nx)``."""
        xs = self.xmin + (np.arange(self.nx) + 0.5) * self.dx
        ys = self.ymin + (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(xs, ys)

    def to_dict(self):
        return {"nx": self.nx, "ny": self.ny, "xmin": self.xmin, "xmax": self.xmax,
                "ymin": self.ymin, "ymax": self.ymax}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["nx"]), int(d["ny"]), float(d.get("xmin", -5.0)), float(d.get("xmax", 5.0)),
                   float(d.get("ymin", -5.0)), float(d.get("ymax", 5.0)))


@dataclass(frozen=True)
class ScanGeometry:
    n_views: int
    n_bins: int
    detector_span: tuple
    grid: ImageGrid

    def __post_init__(self):
        if self.n_views < 1 or self.n_bins < 1:
            raise InvalidInputError("need n_views >= 1 and n_bins >= 1")
        t0, t1 = self.detector_span
        if not t1 > t0:
            raise InvalidInputError("detector span is degenerate")
        object.__setattr__(self, "detector_span", (float(t0), float(t1)))

    @property
    def dt(self):
        t0, t1 = self.detector_span
        return (t1 - t0) / self.n_bins

    @property
    def n_rays(self):
        return self.n_views * self.n_bins

    @property
    def sino_shape(self):
        return (self.n_views, self.n_bins)

    def angles(self):
        return np.arange(self.n_views) * (np.pi / self.n_views)

    def bin_centers(self):
        t0, t1 = self.detector_span
        return 0.5 * (t0 + t1) + (np.arange(self.n_bins) - 0.5 * (self.n_bins - 1)) * self.dt

    def to_dict(self):
        return {"n_views": self.n_views, "n_bins": self.n_bins,
                "detector_span": list(self.detector_span), "grid": self.grid.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["n_views"]), int(d["n_bins"]), tuple(d.get("detector_span", (-7.05, 7.05))),
                   ImageGrid.from_dict(d["grid"]))


def _unit_directions(phis):
    c, s = np.cos(phis), np.sin(phis)
    c = np.where(np.abs(c) < _SNAP, 0.0, c)
    s = np.where(np.abs(s) < _SNAP, 0.0, s)
    return c, s


def ray_for(geom, view, bin):
    """``(point, direction)`` of ray (view, bin); both indices 0-based."""
    if not (0 <= view < geom.n_views and 0 <= bin < geom.n_bins):
        raise InvalidInputError(f"ray ({view}, {bin}) outside {geom.sino_shape}")
    c, s = _unit_directions(np.array([view * np.pi / geom.n_views]))
    t = geom.bin_centers()[bin]
    return np.array([t * c[0], t * s[0]]), np.array([-s[0], c[0]])


def view_rays(geom, views):
    """Points and directions for every ray of the given views, view-major."""
    views = np.asarray(views)
    c, s = _unit_directions(views * (np.pi / geom.n_views))
    t = geom.bin_centers()
    px = (t[None, :] * c[:, None]).ravel()
    py = (t[None, :] * s[:, None]).ravel()
    dx = np.repeat(-s, geom.n_bins)
    dy = np.repeat(c, geom.n_bins)
    return np.stack([px, py], -1), np.stack([dx, dy], -1)


def _plane_params(planes, p, d, s_inside):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        s = (planes[None, :] - p[:, None]) / d[:, None]
    s[d == 0.0] = s_inside
    return s


def trace_rays(grid, points, dirs):
    """Intersection lengths of rays with pixels by walking every plane crossing.

    Returns ``(ray, pixel, length)`` arrays; rays missing the grid contribute
    nothing. ``dirs`` must be unit vectors.
    """
    points = np.asarray(points, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    xp = grid.xmin + np.arange(grid.nx + 1) * grid.dx
    yp = grid.ymin + np.arange(grid.ny + 1) * grid.dy
    px, py = points[:, 0], points[:, 1]
    ux, uy = dirs[:, 0], dirs[:, 1]

    sx = _plane_params(xp, px, ux, np.nan)
    sy = _plane_params(yp, py, uy, np.nan)
    big = np.inf
    with np.errstate(invalid="ignore"):
        lo_x = np.where(ux == 0, -big, np.fmin(sx[:, 0], sx[:, -1]))
        hi_x = np.where(ux == 0, big, np.fmax(sx[:, 0], sx[:, -1]))
        lo_y = np.where(uy == 0, -big, np.fmin(sy[:, 0], sy[:, -1]))
        hi_y = np.where(uy == 0, big, np.fmax(sy[:, 0], sy[:, -1]))
    s_lo = np.maximum(lo_x, lo_y)
    s_hi = np.minimum(hi_x, hi_y)
    inside_x = (ux != 0) | ((px >= grid.xmin) & (px <= grid.xmax))
    inside_y = (uy != 0) | ((py >= grid.ymin) & (py <= grid.ymax))
    hit = inside_x & inside_y & (s_hi > s_lo)
    s_lo = np.where(hit, s_lo, 0.0)
    s_hi = np.where(hit, s_hi, 0.0)

    cand = np.concatenate([s_lo[:, None], sx, sy, s_hi[:, None]], axis=1)
    cand = np.where(np.isnan(cand), s_hi[:, None], cand)
    cand = np.clip(cand, s_lo[:, None], s_hi[:, None])
    cand.sort(axis=1)
    seg = np.diff(cand, axis=1)
    mid = 0.5 * (cand[:, 1:] + cand[:, :-1])
    keep = seg > 1e-12 * grid.dx
    ray_idx, col = np.nonzero(keep)
    m = mid[ray_idx, col]
    ix = np.floor((px[ray_idx] + m * ux[ray_idx] - grid.xmin) / grid.dx).astype(np.int64)
    iy = np.floor((py[ray_idx] + m * uy[ray_idx] - grid.ymin) / grid.dy).astype(np.int64)
    np.clip(ix, 0, grid.nx - 1, out=ix)
    np.clip(iy, 0, grid.ny - 1, out=iy)
    return ray_idx, iy * grid.nx + ix, seg[ray_idx, col]


def intersection_row(geom, view, bin):
    """Sparse weight row ``[(pixel, length_cm)]`` for one ray."""
    p, d = ray_for(geom, view, bin)
    _, pix, length = trace_rays(geom.grid, p[None], d[None])
    return list(zip(pix.tolist(), length.tolist()))


def box_chord(grid, point, direction):
    """Length of the ray's intersection with the grid's bounding box (slab method)."""
    lo, hi = -math.inf, math.inf
    for p, u, a, b in ((point[0], direction[0], grid.xmin, grid.xmax),
                       (point[1], direction[1], grid.ymin, grid.ymax)):
        if u == 0:
            if not a <= p <= b:
                return 0.0
            continue
        s0, s1 = sorted((float(a - p) / float(u), float(b - p) / float(u)))
        lo, hi = max(lo, s0), min(hi, s1)
    return max(hi - lo, 0.0)


class Projector:
    """Applies the system matrix A (rays x pixels) chunk by chunk over views.

    Chunk boundaries are fixed by ``views_per_chunk`` alone, so results do not
    depend on the number of worker threads.
    """

    def __init__(self, geom, views_per_chunk=8, cache=None):
        self.geom = geom
        self.views_per_chunk = int(views_per_chunk)
        self.chunks = [np.arange(v, min(v + self.views_per_chunk, geom.n_views))
                       for v in range(0, geom.n_views, self.views_per_chunk)]
        if cache is None:
            est_nnz = geom.n_rays * (geom.grid.nx + geom.grid.ny)
            cache = est_nnz < 4e7
        self.cache = cache
        self._mats = {}

    def chunk_matrix(self, c):
        if c in self._mats:
            return self._mats[c]
        views = self.chunks[c]
        pts, dirs = view_rays(self.geom, views)
        r, pix, w = trace_rays(self.geom.grid, pts, dirs)
        A = sp.csr_matrix((w, (r, pix)), shape=(len(pts), self.geom.grid.size))
        A.sum_duplicates()
        if self.cache:
            self._mats[c] = A
        return A

    def matrix(self):
        return sp.vstack([self.chunk_matrix(c) for c in range(len(self.chunks))], format="csr")

    def _map(self, fn, threads):
        idx = range(len(self.chunks))
        if threads and threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                return list(pool.map(fn, idx))
        return [fn(c) for c in idx]

    def project(self, image, threads=1):
        image = np.asarray(image, dtype=float)
        if image.shape != self.geom.grid.shape:
            raise InvalidInputError(f"image shape {image.shape} does not match grid {self.geom.grid.shape}")
        f = image.ravel()
        parts = self._map(lambda c: self.chunk_matrix(c) @ f, threads)
        return np.concatenate(parts).reshape(self.geom.sino_shape)

    def backproject(self, sino, threads=1):
        """Adjoint A^T y; chunk partial images are added in chunk order."""
        sino = np.asarray(sino, dtype=float)
        if sino.shape != self.geom.sino_shape:
            raise InvalidInputError(f"sinogram shape {sino.shape} does not match {self.geom.sino_shape}")
        parts = self._map(
            lambda c: self.chunk_matrix(c).T @ sino[self.chunks[c]].ravel(), threads)
        out = np.zeros(self.geom.grid.size)
        for p in parts:
            out += p
        return out.reshape(self.geom.grid.shape)


def project(geom, image, threads=1):
    """x_j = sum_i a_ji f_i for every ray, shape ``(n_views, n_bins)``."""
    return Projector(geom, cache=False).project(image, threads)

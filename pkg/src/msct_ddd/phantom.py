"""Ellipse phantoms with per-material additive densities.

Line integrals are exact (chord length of the ray through each ellipse), so an
analytic sinogram serves as ground truth for the discrete projector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .geometry import ImageGrid, view_rays

BUILTIN_PHANTOMS = ("head", "torso", "disk")


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float
    angle_deg: float
    density: tuple  # g/cm^3 per material

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise InvalidInputError(f"semi-axes must be positive, got a={self.a}, b={self.b}")
        dens = tuple(float(d) for d in self.density)
        if not np.all(np.isfinite(dens)):
            raise InvalidInputError("densities must be finite")
        object.__setattr__(self, "density", dens)


@dataclass(frozen=True)
class EllipsePhantom:
    ellipses: tuple
    materials: tuple = ("water", "bone")
    grid: ImageGrid | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "ellipses", tuple(self.ellipses))
        object.__setattr__(self, "materials", tuple(self.materials))
        for e in self.ellipses:
            if len(e.density) != len(self.materials):
                raise InvalidInputError(
                    f"ellipse has {len(e.density)} densities for {len(self.materials)} materials")

    @property
    def n_materials(self):
        return len(self.materials)

    def to_dict(self):
        d = {"materials": list(self.materials),
             "ellipses": [{"cx": e.cx, "cy": e.cy, "a": e.a, "b": e.b, "angle_deg": e.angle_deg,
                           "density": list(e.density)} for e in self.ellipses]}
        if self.grid is not None:
            d = {"grid": self.grid.to_dict(), **d}
        if self.name:
            d = {"name": self.name, **d}
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            ellipses = [Ellipse(float(e["cx"]), float(e["cy"]), float(e["a"]), float(e["b"]),
                                float(e.get("angle_deg", 0.0)), tuple(e["density"]))
                        for e in d["ellipses"]]
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed phantom ellipse: {exc}") from None
        grid = ImageGrid.from_dict(d["grid"]) if "grid" in d else None
        return cls(tuple(ellipses), tuple(d.get("materials", ("water", "bone"))), grid, d.get("name", ""))


def load_phantom(source):
    """Built-in name (``head``, ``torso``, ``disk``) or path to a phantom JSON file."""
    if str(source) in BUILTIN_PHANTOMS:
        text = resources.files("msct_ddd").joinpath("phantoms").joinpath(f"{source}.json").read_text()
    else:
        text = Path(source).read_text()
    return EllipsePhantom.from_dict(json.loads(text))


def save_phantom(phantom, path):
    Path(path).write_text(json.dumps(phantom.to_dict(), indent=2) + "\n")


def _to_unit_frame(e, px, py, ux, uy):
    th = np.deg2rad(e.angle_deg)
    c, s = np.cos(th), np.sin(th)
    qx, qy = px - e.cx, py - e.cy
    # rotate by -angle, then scale onto the unit circle
    qx, qy = (c * qx + s * qy) / e.a, (-s * qx + c * qy) / e.b
    vx, vy = (c * ux + s * uy) / e.a, (-s * ux + c * uy) / e.b
    return qx, qy, vx, vy


def ellipse_chords(e, points, dirs):
    """Chord length of unit-direction rays through one ellipse."""
    points = np.atleast_2d(points)
    dirs = np.atleast_2d(dirs)
    qx, qy, vx, vy = _to_unit_frame(e, points[:, 0], points[:, 1], dirs[:, 0], dirs[:, 1])
    A = vx * vx + vy * vy
    Bh = qx * vx + qy * vy
    C = qx * qx + qy * qy - 1.0
    disc = Bh * Bh - A * C
    return np.where(disc > 0, 2.0 * np.sqrt(np.maximum(disc, 0.0)) / A, 0.0)


def ellipse_line_integral(phantom, ray, material):
    """Sum over ellipses of density x chord for one ``(point, direction)`` ray."""
    point, direction = (np.asarray(v, dtype=float) for v in ray)
    direction = direction / np.linalg.norm(direction)
    total = 0.0
    for e in phantom.ellipses:
        total += e.density[material] * float(ellipse_chords(e, point[None], direction[None])[0])
    return total


def analytic_sinogram(phantom, geom, material):
    pts, dirs = view_rays(geom, np.arange(geom.n_views))
    out = np.zeros(len(pts))
    for e in phantom.ellipses:
        if e.density[material] != 0.0:
            out += e.density[material] * ellipse_chords(e, pts, dirs)
    return out.reshape(geom.sino_shape)


def rasterize(phantom, grid, material):
    """Pixel value = sum of densities of the ellipses containing the pixel center."""
    X, Y = grid.centers()
    img = np.zeros(grid.shape)
    for e in phantom.ellipses:
        th = np.deg2rad(e.angle_deg)
        c, s = np.cos(th), np.sin(th)
        u = (c * (X - e.cx) + s * (Y - e.cy)) / e.a
        v = (-s * (X - e.cx) + c * (Y - e.cy)) / e.b
        img[u * u + v * v <= 1.0] += e.density[material]
    return img


def rasterize_all(phantom, grid):
    return np.stack([rasterize(phantom, grid, k) for k in range(phantom.n_materials)])

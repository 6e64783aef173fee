"""Binary arrays with JSON sidecars, optional PNG previews, and file hashing.

An artifact ``name`` is stored as ``name.f64`` (little-endian float64,
row-major) next to ``name.json`` holding ``{"kind", "shape", "units", ...}``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

KINDS = ("sinogram", "image")
_DTYPE = "<f8"


def _stem(path):
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".f64", ".json") else path


def dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_array(path, array, kind, units, **extra):
    """Write ``path.f64`` + ``path.json``; returns the two paths."""
    if kind not in KINDS:
        raise InvalidInputError(f"kind must be one of {KINDS}")
    a = np.ascontiguousarray(array, dtype=_DTYPE)
    if a.ndim != 2:
        raise InvalidInputError(f"expected a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("refusing to write non-finite values")
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    data = stem.with_suffix(".f64")
    side = stem.with_suffix(".json")
    data.write_bytes(a.tobytes(order="C"))
    meta = {"kind": kind, "shape": list(a.shape), "units": units, "dtype": "float64-le", **extra}
    dump_json(meta, side)
    return data, side


def read_array(path):
    stem = _stem(path)
    side = stem.with_suffix(".json")
    data = stem.with_suffix(".f64")
    if not side.exists() or not data.exists():
        raise InvalidInputError(f"missing artifact {stem}(.f64/.json)")
    meta = json.loads(side.read_text())
    shape = tuple(meta["shape"])
    a = np.frombuffer(data.read_bytes(), dtype=_DTYPE)
    if a.size != int(np.prod(shape)):
        raise InvalidInputError(f"{data}: {a.size} values for shape {shape}")
    return a.reshape(shape).astype(float), meta


def write_png(path, array, window=None):
    """8-bit grayscale preview, image row 0 (ymin) at the bottom. Needs Pillow."""
    try:
        from PIL import Image
    except ImportError:  # pragma: no cover
        raise InvalidInputError("PNG output needs Pillow (pip install msct-ddd[png])") from None
    a = np.asarray(array, dtype=float)
    lo, hi = window if window is not None else (float(a.min()), float(a.max()))
    span = hi - lo if hi > lo else 1.0
    u8 = np.round(np.clip((a - lo) / span, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8[::-1]).save(Path(path), format="PNG")
    return [float(lo), float(hi)]


def write_artifact(out_dir, name, array, kind, units, png=False, window=None, **extra):
    """Binary + sidecar (+ PNG); the PNG window is recorded in the sidecar."""
    stem = Path(out_dir) / name
    paths = list(write_array(stem, array, kind, units, **extra))
    if png:
        png_path = stem.with_suffix(".png")
        win = write_png(png_path, array, window)
        meta = json.loads(paths[1].read_text())
        meta["png"] = {"file": png_path.name, "window": win}
        dump_json(meta, paths[1])
        paths.append(png_path)
    return paths


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()

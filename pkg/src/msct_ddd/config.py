"""Study configuration: one JSON document, schema-versioned, unknown fields rejected."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .appendix import BUILTINS
from .errors import InvalidInputError
from .geometry import ImageGrid, ScanGeometry
from .phantom import BUILTIN_PHANTOMS, load_phantom
from .recon import FbpConfig
from .solver import SolverConfig
from .spectral import load_model

SCHEMA_VERSION = 1
SEED_ENV = "MSCT_DDD_SEED"
DEFAULT_SPAN = (-7.05, 7.05)


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise InvalidInputError(f"{where} must be a JSON object")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise InvalidInputError(f"unknown field(s) in {where}: {extra}")


@dataclass(frozen=True)
class NoiseConfig:
    snr_db: float
    seed: int = 0

    def to_dict(self):
        return {"snr_db": float(self.snr_db), "seed": int(self.seed)}


@dataclass(frozen=True)
class GammaConfig:
    omega: tuple | None = None  # ((lo...), (hi...)); None = box around truth and noisy inverse
    grid: int = 64

    def to_dict(self):
        om = None if self.omega is None else [list(map(float, self.omega[0])), list(map(float, self.omega[1]))]
        return {"omega": om, "grid": int(self.grid)}


@dataclass(frozen=True)
class StudyConfig:
    name: str
    phantom: str = "head"
    spectra: str = "spectra1"
    mac: str = "mac-water-bone"
    zero_threshold: float = 1e-8
    delta_E: float = 10.0
    geometry: dict = field(default_factory=lambda: {"n_views": 180, "n_bins": 181,
                                                     "detector_span": list(DEFAULT_SPAN)})
    solver: SolverConfig = field(default_factory=SolverConfig)
    noise: NoiseConfig | None = None
    fbp: FbpConfig = field(default_factory=FbpConfig)
    vmi_bins: tuple = (6, 10)
    gamma: GammaConfig = field(default_factory=GammaConfig)
    output_dir: str | None = None
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    FIELDS = ("schema_version", "name", "phantom", "spectra", "mac", "zero_threshold", "delta_E",
              "geometry", "solver", "noise", "fbp", "vmi_bins", "gamma", "output_dir")

    def resolve(self, ref, builtins):
        """Built-in name or a path relative to the config file."""
        if ref in builtins:
            return ref
        p = Path(ref)
        return p if p.is_absolute() else self.base_dir / p

    def load_model(self):
        return load_model(self.resolve(self.spectra, BUILTINS), self.resolve(self.mac, BUILTINS),
                          zero_threshold=self.zero_threshold, delta_E=self.delta_E)

    def input_files(self):
        """Config-referenced files (not built-ins), keyed by field name."""
        out = {}
        for key, ref, builtins in (("phantom", self.phantom, BUILTIN_PHANTOMS),
                                   ("spectra", self.spectra, BUILTINS), ("mac", self.mac, BUILTINS)):
            p = self.resolve(ref, builtins)
            if not isinstance(p, str):
                out[key] = Path(p)
        return out

    def load_phantom(self):
        return load_phantom(self.resolve(self.phantom, BUILTIN_PHANTOMS))

    def scan_geometry(self, phantom=None):
        g = dict(self.geometry)
        if "grid" in g:
            grid = ImageGrid.from_dict(g["grid"])
        else:
            phantom = phantom or self.load_phantom()
            if phantom.grid is None:
                raise InvalidInputError("geometry.grid missing and the phantom carries no grid")
            grid = phantom.grid
        return ScanGeometry(int(g["n_views"]), int(g["n_bins"]),
                            tuple(g.get("detector_span", DEFAULT_SPAN)), grid)

    def to_dict(self):
        """Resolved config as recorded in manifests (no output location)."""
        return {
            "schema_version": SCHEMA_VERSION, "name": self.name, "phantom": self.phantom,
            "spectra": self.spectra, "mac": self.mac, "zero_threshold": float(self.zero_threshold),
            "delta_E": float(self.delta_E), "geometry": self.scan_geometry().to_dict(),
            "solver": self.solver.to_dict(),
            "noise": None if self.noise is None else self.noise.to_dict(),
            "fbp": {"filter": self.fbp.filter, "interpolation": self.fbp.interpolation},
            "vmi_bins": [int(b) for b in self.vmi_bins], "gamma": self.gamma.to_dict(),
        }

    @classmethod
    def from_dict(cls, d, base_dir=".", env=None):
        _reject_unknown(d, cls.FIELDS, "config")
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise InvalidInputError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
        if "name" not in d:
            raise InvalidInputError("config needs a name")
        kw = {k: d[k] for k in ("name", "phantom", "spectra", "mac", "zero_threshold", "delta_E",
                                "output_dir") if k in d}
        if "geometry" in d:
            _reject_unknown(d["geometry"], ("n_views", "n_bins", "detector_span", "grid"), "geometry")
            for key in ("n_views", "n_bins"):
                if key not in d["geometry"]:
                    raise InvalidInputError(f"geometry.{key} is required")
            if "grid" in d["geometry"]:
                _reject_unknown(d["geometry"]["grid"], ("nx", "ny", "xmin", "xmax", "ymin", "ymax"),
                                "geometry.grid")
            kw["geometry"] = dict(d["geometry"])
        if "solver" in d:
            kw["solver"] = SolverConfig.from_dict(d["solver"])
        noise = d.get("noise")
        if noise is not None:
            _reject_unknown(noise, ("snr_db", "seed"), "noise")
            kw["noise"] = NoiseConfig(float(noise["snr_db"]), int(noise.get("seed", 0)))
        if "fbp" in d:
            _reject_unknown(d["fbp"], ("filter", "interpolation"), "fbp")
            kw["fbp"] = FbpConfig(**d["fbp"])
        if "vmi_bins" in d:
            kw["vmi_bins"] = tuple(int(b) for b in d["vmi_bins"])
        if "gamma" in d:
            _reject_unknown(d["gamma"], ("omega", "grid"), "gamma")
            om = d["gamma"].get("omega")
            kw["gamma"] = GammaConfig(None if om is None else (tuple(om[0]), tuple(om[1])),
                                      int(d["gamma"].get("grid", 64)))
        cfg = cls(base_dir=Path(base_dir), **kw)
        env = os.environ if env is None else env
        if env.get(SEED_ENV) and cfg.noise is not None:
            try:
                seed = int(env[SEED_ENV])
            except ValueError:
                raise InvalidInputError(f"{SEED_ENV} must be an integer") from None
            cfg = replace(cfg, noise=NoiseConfig(cfg.noise.snr_db, seed))
        cfg.validate()
        return cfg

    def validate(self):
        for ref, builtins, what in ((self.phantom, BUILTIN_PHANTOMS, "phantom"),
                                    (self.spectra, BUILTINS, "spectra"), (self.mac, BUILTINS, "mac")):
            p = self.resolve(ref, builtins)
            if not isinstance(p, str) and not Path(p).exists():
                raise InvalidInputError(f"{what} file not found: {p}")
        self.scan_geometry()


def load_config(path, env=None):
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from None
    return StudyConfig.from_dict(d, base_dir=path.parent, env=env)

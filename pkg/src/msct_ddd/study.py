"""Study stages over an artifact directory, and the full run with its manifest.

Each stage reads what earlier stages wrote (from ``src``) and writes new files
into ``out`` only. Nothing here records wall-clock time or worker counts, so
the same config yields byte-identical artifacts.
"""

from __future__ import annotations

import json
import logging
import math
import re
from pathlib import Path

import numpy as np

from . import io
from .conditions import check_local_homeo, condition_report, stability_gamma
from .errors import DDDError, InvalidInputError
from .geometry import Projector
from .phantom import rasterize_all
from .recon import fbp_reconstruct, rmse, synthesize_vmi
from .spectral import forward_map
from .solver import add_noise, decompose, error_split, generate_data, reference_inverse, write_re_csv

log = logging.getLogger(__name__)

LARGE_WORK = 128 * 128 * 360  # pixels x views beyond which --large is required
STAGES = ("conditions", "phantom", "project", "data", "decompose", "reconstruct", "vmi",
          "gamma", "error-split", "metrics")


def _safe(name):
    return re.sub(r"[^A-Za-z0-9_-]+", "_", name)


def is_large(geom):
    return geom.grid.size * geom.n_views > LARGE_WORK


def expected_runtime_note(geom):
    secs = 3.0 * geom.n_rays / 32580.0 + 5e-7 * geom.grid.size * geom.n_views
    return f"about {math.ceil(secs / 10) * 10:.0f} s single-threaded for {geom.n_rays} rays"


def _stack(src, prefix, names):
    return np.stack([io.read_array(Path(src) / f"{prefix}_{_safe(n)}")[0] for n in names], axis=-1)


def stage_conditions(cfg, out):
    model = cfg.load_model()
    rep = condition_report(model)
    io.dump_json(rep.to_dict(), Path(out) / "conditions.json")
    return rep


def stage_phantom(cfg, out, png=False):
    ph = cfg.load_phantom()
    geom = cfg.scan_geometry(ph)
    imgs = rasterize_all(ph, geom.grid)
    for name, img in zip(ph.materials, imgs):
        io.write_artifact(out, f"truth_image_{_safe(name)}", img, "image", "g/cm^3", png=png,
                          material=name, grid=geom.grid.to_dict())
    return imgs


def stage_project(cfg, src, out, threads=1):
    ph = cfg.load_phantom()
    geom = cfg.scan_geometry(ph)
    imgs = _stack(src, "truth_image", ph.materials)
    P = Projector(geom)
    sinos = []
    for k, name in enumerate(ph.materials):
        s = P.project(imgs[..., k], threads)
        io.write_artifact(out, f"truth_sino_{_safe(name)}", s, "sinogram", "g/cm^2", material=name,
                          geometry=geom.to_dict())
        sinos.append(s)
    return np.stack(sinos, axis=-1)


def stage_data(cfg, src, out):
    model = cfg.load_model()
    ph = cfg.load_phantom()
    if len(ph.materials) != model.K:
        raise InvalidInputError(f"phantom has {len(ph.materials)} materials, model has K={model.K}")
    x = _stack(src, "truth_sino", ph.materials)
    g = generate_data(model, x)
    for q, name in enumerate(model.spectrum_names):
        io.write_artifact(out, f"data_{_safe(name)}", g[..., q], "sinogram", "1", spectrum=name)
    gn = None
    if cfg.noise is not None:
        gn = add_noise(g, cfg.noise.snr_db, cfg.noise.seed)
        for q, name in enumerate(model.spectrum_names):
            io.write_artifact(out, f"data_noisy_{_safe(name)}", gn[..., q], "sinogram", "1", spectrum=name,
                              snr_db=cfg.noise.snr_db, seed=cfg.noise.seed)
    return g, gn


def _measured(cfg, model, src):
    prefix = "data_noisy" if cfg.noise is not None else "data"
    return _stack(src, prefix, model.spectrum_names)


def stage_decompose(cfg, src, out, threads=1):
    model = cfg.load_model()
    if not check_local_homeo(model).passed:
        log.warning("local homeomorphism condition fails for this model; Newton may not converge")
    ph = cfg.load_phantom()
    g = _measured(cfg, model, src)
    truth = None
    if all((Path(src) / f"truth_sino_{_safe(n)}.f64").exists() for n in ph.materials):
        truth = _stack(src, "truth_sino", ph.materials)
    res = decompose(model, g, truth, cfg.solver, threads=threads)
    shape = g.shape[:-1]
    x = res.x.reshape(shape + (model.K,))
    for k, name in enumerate(model.material_names):
        io.write_artifact(out, f"est_sino_{_safe(name)}", x[..., k], "sinogram", "g/cm^2", material=name)
    if res.re_history is not None:
        write_re_csv(Path(out) / "re.csv", res.re_history)
    summary = {
        "rays": int(res.status.size), "failed": res.n_failed,
        "failed_singular": int(np.count_nonzero(res.status == 1)),
        "failed_diverged": int(np.count_nonzero(res.status == 2)),
        "iterations_max": int(res.iterations.max()), "iterations_min": int(res.iterations.min()),
        "residual_max_ok_rays": float(res.residual[res.status == 0].max()) if np.any(res.status == 0) else None,
        "re_final": None if res.re_history is None else float(res.re_history[-1]),
        "failures": res.failures,
    }
    io.dump_json(summary, Path(out) / "decompose.json")
    return res


def stage_reconstruct(cfg, src, out, threads=1, png=False):
    model = cfg.load_model()
    geom = cfg.scan_geometry()
    x = _stack(src, "est_sino", model.material_names)
    imgs = []
    for k, name in enumerate(model.material_names):
        f = fbp_reconstruct(x[..., k], geom, cfg.fbp, threads)
        io.write_artifact(out, f"recon_{_safe(name)}", f, "image", "g/cm^3", png=png, material=name,
                          filter=cfg.fbp.filter)
        imgs.append(f)
    return imgs


def stage_vmi(cfg, src, out, png=False):
    model = cfg.load_model()
    ph = cfg.load_phantom()
    rec = _stack(src, "recon", model.material_names)
    have_truth = all((Path(src) / f"truth_image_{_safe(n)}.f64").exists() for n in ph.materials)
    truth = _stack(src, "truth_image", ph.materials) if have_truth else None
    out_imgs = {}
    for m in cfg.vmi_bins:
        mu = synthesize_vmi(model, [rec[..., k] for k in range(model.K)], m)
        window = None
        if truth is not None:
            mu_t = synthesize_vmi(model, [truth[..., k] for k in range(model.K)], m)
            window = (float(mu_t.min()), float(mu_t.max()))
            io.write_artifact(out, f"truth_vmi_bin{m}", mu_t, "image", "1/cm", png=png, window=window,
                              bin=int(m), energy_keV=model.bin_energy(m))
        io.write_artifact(out, f"vmi_bin{m}", mu, "image", "1/cm", png=png, window=window,
                          bin=int(m), energy_keV=model.bin_energy(m))
        out_imgs[m] = mu
    return out_imgs


def _auto_omega(arrays):
    lo = np.min([a.reshape(-1, a.shape[-1]).min(axis=0) for a in arrays], axis=0)
    hi = np.max([a.reshape(-1, a.shape[-1]).max(axis=0) for a in arrays], axis=0)
    return np.floor(lo).tolist(), np.ceil(hi).tolist()


def stage_gamma(cfg, src, out, omega=None, grid=None):
    """gamma.json; without an explicit box, Omega is the integer box around the
    truth sinograms and the inverse of the measured data (the reference inverse
    for noisy data, the estimates otherwise): the two points the bound compares."""
    model = cfg.load_model()
    omega = omega or cfg.gamma.omega
    grid = grid or cfg.gamma.grid
    src = Path(src)
    if omega is None:
        arrays = []
        second = "inverse_ref" if (src / f"inverse_ref_{_safe(model.material_names[0])}.f64").exists() \
            else "est_sino"
        for prefix in ("truth_sino", second):
            if all((src / f"{prefix}_{_safe(n)}.f64").exists() for n in model.material_names):
                arrays.append(_stack(src, prefix, model.material_names))
        if not arrays:
            raise InvalidInputError("no sinograms to derive Omega from; pass an explicit box")
        omega = _auto_omega(arrays)
    return stage_gamma_box(model, omega[0], omega[1], grid, out)


def stage_gamma_box(model, lo, hi, grid, out):
    res = stability_gamma(model, lo, hi, grid)
    doc = {"gamma": res.gamma if math.isfinite(res.gamma) else None, "log_gamma": res.log_gamma,
           "beta": list(res.beta), "x": res.x, "omega": res.omega, "grid": res.grid,
           "kept_betas": res.kept_betas,
           "beta_range": "bins with #beta = Q and non-vanishing minor product"}
    io.dump_json(doc, Path(out) / "gamma.json")
    return res


def stage_inverse_ref(cfg, src, out):
    """F^-1 of the noisy data, started from the ordinary-Newton estimate where it converged."""
    model = cfg.load_model()
    gn = _measured(cfg, model, src)
    x0 = _stack(src, "est_sino", model.material_names)
    failed = [f["ray"] for f in json.loads((Path(src) / "decompose.json").read_text())["failures"]]
    start = x0.reshape(-1, model.K).copy()
    start[failed] = 0.0  # restart broken-down rays from the usual initial point
    xs = reference_inverse(model, gn, start).reshape(x0.shape)
    for k, name in enumerate(model.material_names):
        io.write_artifact(out, f"inverse_ref_{_safe(name)}", xs[..., k], "sinogram", "g/cm^2", material=name)
    return xs


def stage_error_split(cfg, src, out, gamma):
    model = cfg.load_model()
    ph = cfg.load_phantom()
    g = _stack(src, "data", model.spectrum_names)
    gn = _stack(src, "data_noisy", model.spectrum_names)
    xn = _stack(src, "est_sino", model.material_names)
    xs = _stack(src, "inverse_ref", model.material_names)
    truth = _stack(src, "truth_sino", ph.materials)
    es = error_split(xn, xs, g, gn, gamma.gamma, truth)
    doc = es.summary()
    doc["max_inverse_residual"] = float(np.max(np.linalg.norm(forward_map(model, xs) - gn, axis=-1)))
    doc["gamma"] = gamma.gamma if math.isfinite(gamma.gamma) else None
    doc["log_gamma"] = gamma.log_gamma
    doc["rays_failing_bound"] = [int(j) for j in np.flatnonzero(~es.holds)]
    io.dump_json(doc, Path(out) / "error_split.json")
    return es


def stage_metrics(cfg, src, out):
    model = cfg.load_model()
    ph = cfg.load_phantom()
    src = Path(src)
    doc = {}
    dec = src / "re.csv"
    if dec.exists():
        rows = dec.read_text().split()[1:]
        doc["re_final"] = float(rows[-1].split(",")[1])
    truth = _stack(src, "truth_image", ph.materials)
    rec = _stack(src, "recon", model.material_names)
    doc["rmse"] = {name: rmse(rec[..., k], truth[..., k]) for k, name in enumerate(model.material_names)}
    doc["vmi_rmse"] = {}
    for m in cfg.vmi_bins:
        mu = io.read_array(src / f"vmi_bin{m}")[0]
        mu_t = io.read_array(src / f"truth_vmi_bin{m}")[0]
        doc["vmi_rmse"][str(m)] = rmse(mu, mu_t)
    io.dump_json(doc, Path(out) / "metrics.json")
    return doc


def _hash_tree(out, skip=("manifest.json",)):
    out = Path(out)
    return {p.relative_to(out).as_posix(): io.sha256_file(p)
            for p in sorted(out.rglob("*")) if p.is_file() and p.name not in skip}


def write_manifest(cfg, out, stages, error=None):
    doc = {
        "schema_version": 1,
        "config": cfg.to_dict(),
        "inputs": {k: io.sha256_file(p) for k, p in sorted(cfg.input_files().items())},
        "stages": stages,
        "complete": error is None and all(s["status"] in ("complete", "skipped") for s in stages),
        "error": error,
        "artifacts": _hash_tree(out),
    }
    io.dump_json(doc, Path(out) / "manifest.json")
    return doc


def run_study(cfg, out, threads=1, png=False):
    """Every stage in order; on failure the manifest names the stage and stays incomplete."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    noisy = cfg.noise is not None
    state = {}

    def gamma_step():
        if noisy:
            stage_inverse_ref(cfg, out, out)
        state["gamma"] = stage_gamma(cfg, out, out)

    plan = [
        ("conditions", lambda: stage_conditions(cfg, out)),
        ("phantom", lambda: stage_phantom(cfg, out, png)),
        ("project", lambda: stage_project(cfg, out, out, threads)),
        ("data", lambda: stage_data(cfg, out, out)),
        ("decompose", lambda: stage_decompose(cfg, out, out, threads)),
        ("reconstruct", lambda: stage_reconstruct(cfg, out, out, threads, png)),
        ("vmi", lambda: stage_vmi(cfg, out, out, png)),
        ("gamma", gamma_step),
        ("error-split", (lambda: stage_error_split(cfg, out, out, state["gamma"])) if noisy else None),
        ("metrics", lambda: stage_metrics(cfg, out, out)),
    ]
    stages, error = [], None
    for name, fn in plan:
        if error is not None:
            stages.append({"name": name, "status": "not-run"})
            continue
        if fn is None:
            stages.append({"name": name, "status": "skipped"})
            continue
        try:
            fn()
            stages.append({"name": name, "status": "complete"})
        except (DDDError, ValueError, OSError, KeyError) as exc:
            stages.append({"name": name, "status": "failed"})
            error = f"{name}: {exc}"
            log.error("stage %s failed: %s", name, exc)
    return write_manifest(cfg, out, stages, error)

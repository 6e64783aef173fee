"""``msct-ddd`` command line: condition checks, study stages and full runs."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io, study
from .config import load_config
from .conditions import check_global_injectivity, check_homeomorphism, condition_report
from .errors import DDDError
from .spectral import DEFAULT_ZERO_THRESHOLD, load_model

log = logging.getLogger("msct_ddd")

EXIT_OK, EXIT_FALSE, EXIT_ERROR = 0, 1, 2


def _floats(text):
    return [float(v) for v in text.split(",")]


def _model_from_args(args):
    if args.config:
        return load_config(args.config).load_model()
    return load_model(args.spectra, args.mac, zero_threshold=args.zero_threshold)


def _out(args, cfg=None):
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(".")


def _guard_large(args, cfg):
    geom = cfg.scan_geometry()
    if study.is_large(geom) and not args.large:
        raise DDDError(f"{geom.grid.nx}x{geom.grid.ny} grid with {geom.n_views} views is a large study "
                       f"({study.expected_runtime_note(geom)}); pass --large to run it")


def cmd_check_conditions(args):
    model = _model_from_args(args)
    rep = condition_report(model)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    io.dump_json(rep.to_dict(), out / "conditions.json")
    print(f"local homeomorphism: {rep.local_homeo.passed} ({rep.local_homeo.orientation})")
    if rep.proper_dect is not None:
        print(f"DECT properness:     {rep.proper_dect.passed} witnesses={rep.proper_dect.witnesses}")
    print(f"homeomorphism:       {rep.homeomorphism}")
    print(f"global injectivity:  {rep.global_injective.passed} (route: {rep.global_injective.route})")
    return EXIT_OK if rep.homeomorphism else EXIT_FALSE


def cmd_gamma(args):
    model = _model_from_args(args)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    ok = check_global_injectivity(model).passed or (model.Q == 2 and check_homeomorphism(model))
    if not ok:
        rep = condition_report(model)
        io.dump_json({"refused": "injectivity conditions do not hold", "conditions": rep.to_dict()},
                     out / "gamma.json")
        print("refused: injectivity conditions do not hold", file=sys.stderr)
        return EXIT_FALSE
    if args.lo is None or args.hi is None:
        if not args.config:
            raise DDDError("gamma needs --lo/--hi, or a --config (Omega from the config or from artifacts in --in)")
        res = study.stage_gamma(load_config(args.config), args.src or out, out, grid=args.grid)
    else:
        res = study.stage_gamma_box(model, _floats(args.lo), _floats(args.hi), args.grid or 64, out)
    print(f"gamma = {res.gamma:.6g} (log {res.log_gamma:.6f}) at beta={list(res.beta)} x={res.x}")
    return EXIT_OK


def _stage(fn_name):
    def run(args):
        cfg = load_config(args.config)
        out = _out(args, cfg)
        out.mkdir(parents=True, exist_ok=True)
        src = Path(args.src) if args.src else out
        if fn_name in ("stage_project", "stage_decompose"):
            _guard_large(args, cfg)
        fn = getattr(study, fn_name)
        if fn_name == "stage_phantom":
            fn(cfg, out, args.png)
        elif fn_name in ("stage_project", "stage_decompose"):
            fn(cfg, src, out, args.threads)
        elif fn_name == "stage_reconstruct":
            fn(cfg, src, out, args.threads, args.png)
        elif fn_name == "stage_vmi":
            fn(cfg, src, out, args.png)
        else:
            fn(cfg, src, out)
        print(f"wrote artifacts to {out}")
        return EXIT_OK
    return run


def cmd_run_study(args):
    cfg = load_config(args.config)
    _guard_large(args, cfg)
    out = _out(args, cfg)
    manifest = study.run_study(cfg, out, threads=args.threads, png=args.png)
    status = "complete" if manifest["complete"] else f"INCOMPLETE ({manifest['error']})"
    print(f"study {cfg.name}: {status}; {len(manifest['artifacts'])} artifacts in {out}")
    metrics = out / "metrics.json"
    if metrics.exists():
        print(json.dumps(json.loads(metrics.read_text()), sort_keys=True))
    return EXIT_OK if manifest["complete"] else EXIT_ERROR


def build_parser():
    p = argparse.ArgumentParser(prog="msct-ddd", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model_args=False, src=False):
        sp.add_argument("--config", help="study config JSON")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
        sp.add_argument("--png", action="store_true", help="also write 8-bit PNG previews")
        sp.add_argument("--large", action="store_true", help="allow large (256^2 / 360-view) studies")
        if src:
            sp.add_argument("--in", dest="src", help="directory with earlier artifacts (default: --out)")
        if model_args:
            sp.add_argument("--spectra", default="spectra1", help="built-in name or CSV")
            sp.add_argument("--mac", default="mac-water-bone", help="built-in name or CSV")
            sp.add_argument("--zero-threshold", type=float, default=DEFAULT_ZERO_THRESHOLD)

    sp = sub.add_parser("check-conditions", help="verify the existence/uniqueness conditions")
    common(sp, model_args=True)
    sp.set_defaults(func=cmd_check_conditions)

    sp = sub.add_parser("gamma", help="stability constant over a box")
    common(sp, model_args=True, src=True)
    sp.add_argument("--lo", help="comma-separated lower corner of Omega")
    sp.add_argument("--hi", help="comma-separated upper corner of Omega")
    sp.add_argument("--grid", type=int, default=None, help="samples per axis (default 64)")
    sp.set_defaults(func=cmd_gamma)

    for name, fn, helptext in (("gen-phantom", "stage_phantom", "rasterize truth basis images"),
                               ("project", "stage_project", "truth basis sinograms"),
                               ("gen-data", "stage_data", "log-domain data (+ noise)"),
                               ("decompose", "stage_decompose", "Newton decomposition per ray"),
                               ("reconstruct", "stage_reconstruct", "FBP of estimated sinograms"),
                               ("vmi", "stage_vmi", "virtual monochromatic images")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, src=True)
        sp.set_defaults(func=_stage(fn))

    sp = sub.add_parser("run-study", help="every stage plus manifest.json")
    common(sp)
    sp.set_defaults(func=cmd_run_study)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command not in ("check-conditions", "gamma") and not args.config:
        print(f"error: {args.command} needs --config", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except (DDDError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Run the 256x256 torso-like studies (360 views x 360 bins) for both spectra."""

import argparse
import json
import time
from pathlib import Path

from msct_ddd.config import load_config
from msct_ddd.study import expected_runtime_note, run_study

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=str(ROOT / "runs"))
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--png", action="store_true")
    args = p.parse_args()
    for name in ("torso_spectra1", "torso_spectra2"):
        cfg = load_config(ROOT / "configs" / f"{name}.json")
        print(f"{name}: {expected_runtime_note(cfg.scan_geometry())}")
        out = Path(args.out) / name
        t0 = time.perf_counter()
        man = run_study(cfg, out, threads=args.threads, png=args.png)
        status = "complete" if man["complete"] else f"incomplete ({man['error']})"
        print(f"  {status} in {time.perf_counter() - t0:.1f} s")
        if man["complete"]:
            print("  " + json.dumps(json.loads((out / "metrics.json").read_text()), sort_keys=True))


if __name__ == "__main__":
    main()

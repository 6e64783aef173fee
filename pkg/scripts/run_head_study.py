#!/usr/bin/env python3
"""Run the four head-phantom studies (two spectra, noiseless and noisy) and print their metrics."""

import argparse
import json
import time
from pathlib import Path

from msct_ddd.config import load_config
from msct_ddd.study import run_study

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ["head_spectra1", "head_spectra2", "head_spectra1_noisy", "head_spectra2_noisy"]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=str(ROOT / "runs"), help="parent directory for the study folders")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--png", action="store_true")
    args = p.parse_args()
    for name in CONFIGS:
        cfg = load_config(ROOT / "configs" / f"{name}.json")
        out = Path(args.out) / name
        t0 = time.perf_counter()
        man = run_study(cfg, out, threads=args.threads, png=args.png)
        metrics = json.loads((out / "metrics.json").read_text()) if man["complete"] else {}
        print(f"{name:22s} {time.perf_counter() - t0:6.1f} s  RE100={metrics.get('re_final')!s:24s} "
              f"rmse={metrics.get('rmse')}")


if __name__ == "__main__":
    main()

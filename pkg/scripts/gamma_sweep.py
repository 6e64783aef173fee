#!/usr/bin/env python3
"""log(gamma) of both appendix models over growing boxes [0, s] x [0, s/2].

Shows how fast the stability constant grows with the size of the region.
"""

import argparse

import numpy as np

from msct_ddd.conditions import stability_gamma
from msct_ddd.spectral import load_model


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--sizes", default="1,2,5,10,20,40,60")
    args = p.parse_args()
    sizes = [float(s) for s in args.sizes.split(",")]
    print("size  " + "  ".join(f"{n:>22s}" for n in ("spectra1 log gamma", "spectra2 log gamma")))
    models = [load_model("spectra1"), load_model("spectra2")]
    for s in sizes:
        vals = [stability_gamma(m, [0.0, 0.0], [s, s / 2], args.grid).log_gamma for m in models]
        print(f"{s:5.1f} " + "  ".join(f"{v:22.4f}" for v in vals)
              + f"   (gamma ~ 1e{np.log10(np.e) * vals[0]:.0f} / 1e{np.log10(np.e) * vals[1]:.0f})")


if __name__ == "__main__":
    main()

"""Built-in 14-bin spectra and water/bone MAC tables.

Values are kept as the printed strings so the shipped tables carry exactly the
published digits; rows of the spectra are renormalized only when a
:class:`~msct_ddd.spectral.SpectralModel` is built from them.
"""

import numpy as np

# columns: low-kV, high-kV
_SPECTRA1 = """
6.07397e-09 1.33388e-09
7.10972e-02 2.69644e-02
2.75239e-01 1.65195e-01
2.75638e-01 1.98221e-01
1.99787e-01 1.69333e-01
1.23729e-01 1.56827e-01
5.45098e-02 7.83202e-02
0.00000e+00 6.44024e-02
0.00000e+00 5.06969e-02
0.00000e+00 3.78745e-02
0.00000e+00 2.66297e-02
0.00000e+00 1.69125e-02
0.00000e+00 8.18109e-03
0.00000e+00 4.43064e-04
"""

# columns: low-kV, Cu-filtered high-kV
_SPECTRA2 = """
6.07397e-09 0.00000e+00
7.10972e-02 0.00000e+00
2.75239e-01 6.63807e-05
2.75638e-01 1.42761e-02
1.99787e-01 8.19111e-02
1.23729e-01 1.77453e-01
5.45098e-02 1.38680e-01
0.00000e+00 1.49775e-01
0.00000e+00 1.40374e-01
0.00000e+00 1.17542e-01
0.00000e+00 8.91056e-02
0.00000e+00 5.94650e-02
0.00000e+00 2.97105e-02
0.00000e+00 1.64171e-03
"""

# columns: water, bone (cm^2/g)
_MAC_WATER_BONE = """
4.76251e+00 2.55327e+01
7.75665e-01 3.78214e+00
3.64996e-01 1.26821e+00
2.65875e-01 6.50013e-01
2.25389e-01 4.16057e-01
2.05162e-01 3.11231e-01
1.92592e-01 2.55515e-01
1.83292e-01 2.21535e-01
1.76097e-01 1.99266e-01
1.70448e-01 1.84934e-01
1.65911e-01 1.76111e-01
1.62055e-01 1.70366e-01
1.58449e-01 1.65270e-01
1.55060e-01 1.59231e-01
"""


def _parse(block):
    rows = [line.split() for line in block.strip().splitlines()]
    return np.array([[float(v) for v in row] for row in rows]).T


# name -> (column names, row-major table as printed, transposed to rows=columns)
BUILTINS = {
    "spectra1": (("low-kV", "high-kV"), _SPECTRA1),
    "spectra2": (("low-kV", "high-kV-Cu"), _SPECTRA2),
    "mac-water-bone": (("water", "bone"), _MAC_WATER_BONE),
}


def builtin_table(name):
    """Return ``(names, matrix)`` for a built-in table; matrix has one row per column name."""
    try:
        names, block = BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown built-in table {name!r}; choose from {sorted(BUILTINS)}") from None
    return names, _parse(block)


def builtin_csv_text(name):
    """The built-in table rendered in the ``bin,<name1>,...`` CSV layout."""
    names, block = BUILTINS[name]
    lines = ["bin," + ",".join(names)]
    for m, line in enumerate(block.strip().splitlines(), start=1):
        lines.append(f"{m}," + ",".join(line.split()))
    return "\n".join(lines) + "\n"

import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from msct_ddd.geometry import Projector, ScanGeometry
from msct_ddd.phantom import load_phantom, rasterize_all
from msct_ddd.spectral import SpectralModel, load_model

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

REGRESSION_FILE = Path(__file__).parent / "regression_constants.json"
STUDY_SPAN = (-7.05, 7.05)


def frozen(key, value):
    """First run records ``value`` under ``key``; later runs get the recorded one back."""
    table = json.loads(REGRESSION_FILE.read_text()) if REGRESSION_FILE.exists() else {}
    if key not in table:
        table[key] = value
        REGRESSION_FILE.write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    return table[key]


@pytest.fixture(scope="session")
def model1():
    return load_model("spectra1")


@pytest.fixture(scope="session")
def model2():
    return load_model("spectra2")


@pytest.fixture(scope="session")
def identity_model():
    return SpectralModel(np.eye(2), np.eye(2), positive_mac=False)


def head_sinograms(n_views=180, n_bins=181):
    ph = load_phantom("head")
    geom = ScanGeometry(n_views, n_bins, STUDY_SPAN, ph.grid)
    imgs = rasterize_all(ph, ph.grid)
    P = Projector(geom)
    return geom, imgs, np.stack([P.project(f) for f in imgs], axis=-1)


@pytest.fixture(scope="session")
def head_study():
    return head_sinograms()


# acceptance criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE, key=str):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")

import numpy as np
import pytest

from fmcorr import shapes
from fmcorr.descriptors import compute_shot
from fmcorr.fmnet import ShapeBundle
from fmcorr.spectral import build_fem_laplacian, compute_eigenbasis

# acceptance results collected by tests/test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ico2():
    return shapes.icosphere(2)


@pytest.fixture(scope="session")
def small_blob():
    return shapes.blob(60, seed=7)


def make_bundle(mesh, k, radius_frac=0.2, basis_id=""):
    basis = compute_eigenbasis(build_fem_laplacian(mesh), k, basis_id=basis_id)
    shot = compute_shot(mesh, radius_frac * mesh.bounding_box_diagonal())
    return ShapeBundle(basis, shot.values, mesh)

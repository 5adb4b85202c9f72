import functools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import dense_oracle, element_assembly

from fmcorr import shapes
from fmcorr.errors import MeshFormatError
from fmcorr.mesh import TriMesh
from fmcorr.spectral import (basis_residuals, build_fem_laplacian, compute_eigenbasis, fix_signs, project,
                             reconstruct)


def perturbed_grid(nx, ny, seed):
    g = shapes.grid(nx, ny)
    rng = np.random.default_rng(seed)
    v = g.vertices + np.column_stack([rng.uniform(-0.2, 0.2, (g.n_vertices, 2)), rng.uniform(-0.3, 0.3, g.n_vertices)])
    return TriMesh(v, g.faces)


def test_right_triangle_weights():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    W = build_fem_laplacian(m).stiffness.toarray()
    assert W[1, 2] == pytest.approx(0.0, abs=1e-15)
    assert W[0, 1] == pytest.approx(-0.5)
    assert W[0, 2] == pytest.approx(-0.5)


def test_matches_element_assembly_oracle(ico2):
    op = build_fem_laplacian(ico2)
    W, A = element_assembly(ico2)
    np.testing.assert_allclose(op.stiffness.toarray(), W, rtol=0, atol=1e-12)
    np.testing.assert_allclose(op.mass_diagonal, A, rtol=0, atol=1e-15)


@pytest.mark.parametrize("mesh_fn", [lambda: shapes.icosphere(1), lambda: shapes.grid(4, 6),
                                     lambda: shapes.blob(80, seed=2), lambda: perturbed_grid(5, 5, 0)])
def test_operator_invariants(mesh_fn):
    op = build_fem_laplacian(mesh_fn())
    W = op.stiffness
    assert (W != W.T).nnz == 0
    np.testing.assert_allclose(W @ np.ones(op.n), 0, atol=1e-10 * abs(W).max())
    assert np.all(op.mass_diagonal > 0)
    assert np.linalg.eigvalsh(W.toarray()).min() > -1e-10


def test_boundary_edge_has_one_cotangent():
    m = shapes.grid(2, 2)  # two right triangles sharing the diagonal (0, 3)
    W = build_fem_laplacian(m).stiffness.toarray()
    assert W[0, 1] == pytest.approx(-0.5)  # boundary edge, opposite a 45 degree angle
    assert W[0, 3] == pytest.approx(0.0, abs=1e-15)  # diagonal, two right angles


def test_closed_mesh_kernel(ico2):
    op = build_fem_laplacian(ico2)
    b = compute_eigenbasis(op, 4)
    assert abs(b.eigenvalues[0]) < 1e-8
    np.testing.assert_allclose(b.eigenfunctions[:, 0], ico2.total_area ** -0.5, atol=1e-6)


def test_basis_invariants(ico2):
    op = build_fem_laplacian(ico2)
    b = compute_eigenbasis(op, 20)
    gram = b.eigenfunctions.T @ (b.mass_diagonal[:, None] * b.eigenfunctions)
    np.testing.assert_allclose(gram, np.eye(20), atol=1e-8)
    assert np.all(basis_residuals(op, b) <= 1e-6 * (1 + b.eigenvalues[-1]))
    assert np.all(np.diff(b.eigenvalues) >= 0) and b.eigenvalues[0] >= -1e-10


def test_sign_convention():
    v = np.array([[1.0, -3.0, 0.0], [-2.0, 1.0, 0.0], [2.0, 3.0, 0.0]])
    out = fix_signs(v)
    # column 0: first max-magnitude entry is -2 -> flipped; column 1: -3 first -> flipped
    np.testing.assert_array_equal(out[:, 0], [-1.0, 2.0, -2.0])
    np.testing.assert_array_equal(out[:, 1], [3.0, -1.0, -3.0])
    np.testing.assert_array_equal(out[:, 2], 0.0)


def test_complete_basis_matches_dense_oracle():
    m = perturbed_grid(4, 5, 3)  # 20 vertices, no symmetric multiplets
    b = compute_eigenbasis(build_fem_laplacian(m), m.n_vertices)
    vals, vecs = dense_oracle(m, m.n_vertices)
    np.testing.assert_allclose(b.eigenvalues, vals, atol=1e-8)
    np.testing.assert_allclose(b.eigenfunctions, vecs, atol=1e-8)


def test_sparse_and_dense_paths_agree():
    m = shapes.blob(120, seed=5)
    op = build_fem_laplacian(m)
    d = compute_eigenbasis(op, 12, method="dense")
    s = compute_eigenbasis(op, 12, method="sparse")
    np.testing.assert_allclose(s.eigenvalues, d.eigenvalues, atol=1e-9)
    np.testing.assert_allclose(s.eigenfunctions, d.eigenfunctions, atol=1e-8)


def test_k_validation(ico2):
    op = build_fem_laplacian(ico2)
    with pytest.raises(ValueError, match="k must satisfy"):
        compute_eigenbasis(op, ico2.n_vertices + 1)
    with pytest.raises(ValueError, match="unknown eigensolver"):
        compute_eigenbasis(op, 3, method="qr")


def test_finer_icosphere_spectrum():
    # at 642 vertices the discretisation error of the l(l+1) spectrum is about 1.4%
    b = compute_eigenbasis(build_fem_laplacian(shapes.icosphere(3)), 10)
    ref = np.array([2, 2, 2, 6, 6, 6, 6, 6, 12.0])
    assert abs(b.eigenvalues[0]) < 1e-8
    assert np.max(np.abs(b.eigenvalues[1:] - ref) / ref) < 0.02


# --- projection / reconstruction ---------------------------------------------


@pytest.fixture(scope="module")
def blob_basis():
    m = shapes.blob(90, seed=4)
    return m, compute_eigenbasis(build_fem_laplacian(m), 90)


def test_project_basis_is_identity(blob_basis):
    _, b = blob_basis
    np.testing.assert_allclose(project(b, b.eigenfunctions), np.eye(b.k), atol=1e-8)


def test_project_constant(blob_basis):
    m, b = blob_basis
    c = project(b, np.full(m.n_vertices, 2.5))
    sign = np.sign(b.eigenfunctions[0, 0])
    assert c[0, 0] == pytest.approx(sign * 2.5 * np.sqrt(m.total_area), rel=1e-8)
    np.testing.assert_allclose(c[1:, 0], 0, atol=1e-8)


def test_reconstruct_basics(blob_basis):
    _, b = blob_basis
    e = np.zeros((b.k, 1))
    e[3] = 1.0
    np.testing.assert_array_equal(reconstruct(b, e)[:, 0], b.eigenfunctions[:, 3])
    np.testing.assert_array_equal(reconstruct(b, np.zeros((b.k, 2))), 0.0)


def test_smooth_reconstruction_error_decreases(blob_basis):
    m, b = blob_basis
    F = np.column_stack([np.sin(m.vertices[:, 0]), m.vertices[:, 1] ** 2, np.exp(-m.vertices[:, 2])])

    def err(k):
        bk = b.truncated(k)
        R = reconstruct(bk, project(bk, F)) - F
        return np.sqrt(np.sum(b.mass_diagonal[:, None] * R ** 2) / np.sum(b.mass_diagonal[:, None] * F ** 2))

    errs = [err(k) for k in (5, 20, m.n_vertices)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-10


@functools.lru_cache(maxsize=1)
def blob_basis_30():
    return compute_eigenbasis(build_fem_laplacian(shapes.blob(90, seed=4)), 30)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 30), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_project_reconstruct_round_trip(k, q, seed):
    b = blob_basis_30().truncated(k)
    X = np.random.default_rng(seed).normal(size=(k, q))
    np.testing.assert_allclose(project(b, reconstruct(b, X)), X, atol=1e-8)


def test_dimension_mismatch(blob_basis):
    _, b = blob_basis
    with pytest.raises(ValueError, match="rows"):
        project(b, np.zeros((5, 2)))
    with pytest.raises(ValueError, match="rows"):
        reconstruct(b, np.zeros((b.k + 1, 2)))


def test_zero_area_faces_never_reach_assembly():
    with pytest.raises(MeshFormatError):
        TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])

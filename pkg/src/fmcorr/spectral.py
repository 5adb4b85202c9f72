"""Cotangent Laplacian, truncated Laplace-Beltrami eigenbases and spectral transforms."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import EigenSolverError

DENSE_MAX_N = 500
SHIFT = -1e-8


@dataclass(frozen=True)
class LaplaceOperator:
    """Stiffness ``W`` (cotangent weights, PSD sign convention) and lumped mass ``A``."""

    stiffness: sparse.csr_matrix
    mass_diagonal: np.ndarray

    @property
    def n(self):
        return self.stiffness.shape[0]

    @property
    def mass(self):
        return sparse.diags(self.mass_diagonal, format="csr")


def cotangent_weights(mesh):
    """Per-face cotangents of the angle at each corner, shape (m, 3).

    Column ``c`` holds the cotangent of the angle at corner ``c``, i.e. the
    weight that enters the edge opposite that corner.
    """
    v, f = mesh.vertices, mesh.faces
    cots = np.empty(f.shape)
    for c in range(3):
        p = v[f[:, c]]
        e1 = v[f[:, (c + 1) % 3]] - p
        e2 = v[f[:, (c + 2) % 3]] - p
        cots[:, c] = np.einsum("ij,ij->i", e1, e2) / np.linalg.norm(np.cross(e1, e2), axis=1)
    return cots


def build_fem_laplacian(mesh):
    """Assemble the linear-FEM stiffness matrix and the lumped mass of ``mesh``.

    Off-diagonal entry ``(i, j)`` is ``-(cot a_ij + cot b_ij) / 2`` summed over
    the faces sharing edge ``ij`` (one term on boundary edges); diagonal
    entries make every row sum to zero. Obtuse angles are kept as is.
    """
    f = mesh.faces
    cots = cotangent_weights(mesh)
    rows, cols, vals = [], [], []
    for c in range(3):
        i, j = f[:, (c + 1) % 3], f[:, (c + 2) % 3]
        rows.append(np.minimum(i, j))
        cols.append(np.maximum(i, j))
        vals.append(-0.5 * cots[:, c])
    n = mesh.n_vertices
    # assemble the strict upper triangle once, then mirror it: exact symmetry
    upper = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    upper.sum_duplicates()
    off = upper + upper.T
    diag = -np.asarray(off.sum(axis=1)).ravel()
    W = (off + sparse.diags(diag)).tocsr()
    W.sort_indices()
    return LaplaceOperator(W, np.array(mesh.vertex_areas))


@dataclass(frozen=True)
class SpectralBasis:
    """First ``k`` mass-orthonormal eigenpairs of ``W phi = lambda A phi``."""

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    mass_diagonal: np.ndarray
    basis_id: str = field(default="", compare=False)

    @property
    def k(self):
        return len(self.eigenvalues)

    @property
    def n(self):
        return self.eigenfunctions.shape[0]

    def truncated(self, k):
        if not 1 <= k <= self.k:
            raise ValueError(f"cannot truncate a basis of size {self.k} to {k}")
        return SpectralBasis(self.eigenvalues[:k], self.eigenfunctions[:, :k], self.mass_diagonal,
                             self.basis_id)

    def analysis(self, rows=None):
        """``Phi^T A`` (k x n), optionally restricted to vertex columns ``rows``."""
        if rows is None:
            return (self.eigenfunctions * self.mass_diagonal[:, None]).T
        rows = np.asarray(rows)
        return (self.eigenfunctions[rows] * self.mass_diagonal[rows, None]).T


def fix_signs(vectors):
    """Flip columns so that each column's largest-magnitude entry is positive.

    ``np.argmax`` returns the first maximiser, so ties go to the lowest index.
    """
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _dense_eigh(op, k):
    W = op.stiffness.toarray()
    return scipy.linalg.eigh(W, np.diag(op.mass_diagonal), subset_by_index=[0, k - 1])


def _sparse_eigh(op, k, tol, maxiter):
    try:
        vals, vecs = splinalg.eigsh(op.stiffness.tocsc(), k=k, M=op.mass.tocsc(), sigma=SHIFT,
                                    which="LM", tol=tol, maxiter=maxiter)
    except splinalg.ArpackNoConvergence as exc:
        res = _residuals(op, exc.eigenvalues, exc.eigenvectors) if len(exc.eigenvalues) else None
        raise EigenSolverError(
            f"Lanczos did not converge: {len(exc.eigenvalues)} of {k} eigenpairs found", res
        ) from None
    # Rayleigh-Ritz on the returned subspace restores exact A-orthonormality
    Aq = vecs * op.mass_diagonal[:, None]
    Ws = vecs.T @ (op.stiffness @ vecs)
    Ms = vecs.T @ Aq
    vals, rot = scipy.linalg.eigh((Ws + Ws.T) / 2, (Ms + Ms.T) / 2)
    return vals, vecs @ rot


def _residuals(op, vals, vecs):
    r = op.stiffness @ vecs - (vecs * op.mass_diagonal[:, None]) * vals
    return np.linalg.norm(r, axis=0)


def compute_eigenbasis(op, k, method="auto", tol=0.0, maxiter=None, basis_id=""):
    """Smallest ``k`` generalized eigenpairs of the pencil ``(W, A)``.

    Parameters
    ----------
    op : LaplaceOperator
    k : int
        Number of eigenpairs, ``1 <= k <= n``.
    method : {'auto', 'dense', 'sparse'}
        'auto' uses a dense solver up to 500 vertices and shift-invert Lanczos
        (shift -1e-8, so the zero eigenvalue is reachable) beyond.

    Returns
    -------
    SpectralBasis
        Eigenvalues ascending; each eigenvector's largest-magnitude entry is
        positive.
    """
    n = op.n
    if not 1 <= k <= n:
        raise ValueError(f"k must satisfy 1 <= k <= n={n}, got {k}")
    if method == "auto":
        method = "dense" if n <= DENSE_MAX_N else "sparse"
    if method == "sparse" and k >= n - 1:
        # ARPACK needs k < n - 1
        method = "dense"
    if method == "dense":
        vals, vecs = _dense_eigh(op, k)
    elif method == "sparse":
        vals, vecs = _sparse_eigh(op, k, tol, maxiter)
    else:
        raise ValueError(f"unknown eigensolver method {method!r}")
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], fix_signs(vecs[:, order])
    return SpectralBasis(vals, vecs, np.array(op.mass_diagonal), basis_id)


def basis_residuals(op, basis):
    return _residuals(op, basis.eigenvalues, basis.eigenfunctions)


def _check_rows(name, X, rows):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got shape {X.shape}")
    return X


def project(basis, functions):
    """Spectral coefficients ``Phi^T A F`` of per-vertex functions (n x q) -> (k x q)."""
    F = _check_rows("functions", functions, basis.n)
    return basis.eigenfunctions.T @ (F * basis.mass_diagonal[:, None])


def reconstruct(basis, coeffs):
    """Per-vertex functions ``Phi @ coeffs`` from spectral coefficients (k x q)."""
    X = _check_rows("coeffs", coeffs, basis.k)
    return basis.eigenfunctions @ X

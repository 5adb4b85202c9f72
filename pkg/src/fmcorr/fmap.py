"""Functional-map solve, soft correspondences, the soft error loss and map recovery."""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateColumnError
from .mesh import nearest_rows

PINV_RCOND = 1e-10


class RankWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FunctionalMap:
    """``C`` (k_target x k_source): spectral coefficients of source functions -> target."""

    C: np.ndarray
    source_basis_id: str = ""
    target_basis_id: str = ""

    def __post_init__(self):
        C = np.asarray(self.C, dtype=np.float64)
        if C.ndim != 2:
            raise ValueError("a functional map must be a 2-D matrix")
        if not np.all(np.isfinite(C)):
            raise ValueError("functional map has non-finite entries")
        object.__setattr__(self, "C", C)

    def check_bases(self, src_basis, tgt_basis):
        if self.C.shape != (tgt_basis.k, src_basis.k):
            raise ValueError(f"map of shape {self.C.shape} does not fit bases with "
                             f"k_src={src_basis.k}, k_tgt={tgt_basis.k}")
        for want, basis in ((self.source_basis_id, src_basis), (self.target_basis_id, tgt_basis)):
            if want and basis.basis_id and want != basis.basis_id:
                raise ValueError(f"basis id mismatch: map expects {want!r}, got {basis.basis_id!r}")


@dataclass(frozen=True)
class SoftCorrespondence:
    """Column-stochastic ``P`` (n_target x len(columns)); column j is source vertex ``columns[j]``."""

    P: np.ndarray
    columns: np.ndarray


@dataclass(frozen=True)
class PointMap:
    """Dense vertex map: ``assignments[x]`` is the target vertex of source vertex ``x``."""

    assignments: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "assignments", np.asarray(self.assignments, dtype=np.int64))

    def __len__(self):
        return len(self.assignments)

    def to_text(self):
        return "".join(f"{int(a)}\n" for a in self.assignments)

    @classmethod
    def from_text(cls, text):
        vals = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            try:
                vals.append(int(line))
            except ValueError:
                raise ValueError(f"line {lineno}: expected an integer vertex index, got {line!r}") from None
        return cls(np.array(vals, dtype=np.int64))

    def save(self, path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path, encoding="ascii") as fh:
            return cls.from_text(fh.read())


def _pair_shapes(F, G):
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    G = np.atleast_2d(np.asarray(G, dtype=np.float64))
    if F.shape[1] != G.shape[1]:
        raise ValueError(f"coefficient matrices need the same number of columns: {F.shape} vs {G.shape}")
    if F.shape[1] < 1:
        raise ValueError("at least one descriptor (column) is required")
    return F, G


def solve_fmap(src_coeffs, tgt_coeffs, ridge=0.0):
    """Least-squares functional map ``argmin_C ||C F - G||_F``.

    With ``ridge == 0`` this is ``G F^+`` through an SVD pseudo-inverse
    (singular values below 1e-10 * s_max dropped); otherwise
    ``G F^T (F F^T + ridge I)^-1``.
    """
    F, G = _pair_shapes(src_coeffs, tgt_coeffs)
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if ridge > 0:
        M = F @ F.T + ridge * np.eye(F.shape[0])
        C = scipy.linalg.solve(M, F @ G.T, assume_a="pos").T
        return FunctionalMap(C)
    U, s, Vt = np.linalg.svd(F, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        warnings.warn("source coefficients are all zero; returning C = 0", RankWarning, stacklevel=2)
        return FunctionalMap(np.zeros((G.shape[0], F.shape[0])))
    keep = s > PINV_RCOND * s[0]
    if not np.all(keep):
        warnings.warn(f"rank-deficient source coefficients (rank {keep.sum()} of {F.shape[0]})",
                      RankWarning, stacklevel=2)
    C = (G @ Vt[keep].T / s[keep]) @ U[:, keep].T
    return FunctionalMap(C)


def normalize_columns(X):
    """l1-normalise the columns of a nonnegative matrix."""
    sums = X.sum(axis=0)
    bad = np.flatnonzero(sums == 0)
    if bad.size:
        raise DegenerateColumnError(bad)
    return X / sums


def soft_correspondence(src_basis, tgt_basis, fmap, columns=None):
    """``P = |Psi C Phi^T A|`` with l1-normalised columns.

    Only the source vertices listed in ``columns`` are formed when given.
    """
    fmap.check_bases(src_basis, tgt_basis)
    cols = np.arange(src_basis.n) if columns is None else np.asarray(columns, dtype=np.int64)
    S = tgt_basis.eigenfunctions @ (fmap.C @ src_basis.analysis(cols))
    try:
        P = normalize_columns(np.abs(S))
    except DegenerateColumnError as exc:
        raise DegenerateColumnError(cols[exc.columns]) from None
    return SoftCorrespondence(P, cols)


def soft_error_loss(P, truth, distances, form="sum"):
    """Probability-weighted geodesic deviation of a soft correspondence.

    Parameters
    ----------
    P : SoftCorrespondence
    truth : array-like
        Ground-truth target vertex for each stored column of ``P``.
    distances : DistanceRows
        Must contain a row for every ground-truth target.
    form : {'sum', 'frobenius'}
        'sum' returns ``sum_y P(y, x) d(y, truth(x))`` averaged over the
        stored columns; 'frobenius' returns ``||P o D||_F`` over them.
    """
    truth = np.asarray(truth, dtype=np.int64)
    if len(truth) != P.P.shape[1]:
        raise ValueError(f"{len(truth)} ground-truth targets for {P.P.shape[1]} columns")
    D = distances.rows(truth).T
    if D.shape != P.P.shape:
        raise ValueError(f"distance rows of length {D.shape[0]} do not match {P.P.shape[0]} target vertices")
    if form == "sum":
        return float(np.sum(P.P * D) / P.P.shape[1])
    if form == "frobenius":
        return float(np.linalg.norm(P.P * D))
    raise ValueError(f"unknown loss form {form!r}")


def spectral_embeddings(src_basis, tgt_basis, fmap):
    """Rows to match: mapped source embeddings ``(C Phi^T)^T`` and target rows of ``Psi``."""
    fmap.check_bases(src_basis, tgt_basis)
    return src_basis.eigenfunctions @ fmap.C.T, tgt_basis.eigenfunctions


def recover_point_map(src_basis, tgt_basis, fmap):
    """Nearest-neighbor recovery of a vertex map from a functional map.

    Source vertex ``x`` goes to the target vertex whose row of ``Psi`` is
    closest to ``C Phi(x, :)^T``; ties resolve to the lowest index.
    """
    queries, points = spectral_embeddings(src_basis, tgt_basis, fmap)
    return PointMap(nearest_rows(queries, points))

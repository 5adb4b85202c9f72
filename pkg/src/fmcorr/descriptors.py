"""Point-wise input descriptors: SHOT (352-D) and the heat kernel signature."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

N_AZIMUTH = 8
N_ELEVATION = 2
N_RADIAL = 2
N_COS_BINS = 11
N_VOLUMES = N_AZIMUTH * N_ELEVATION * N_RADIAL
SHOT_DIM = N_VOLUMES * N_COS_BINS  # 352


@dataclass(frozen=True)
class ShotConfig:
    """SHOT support size; the bin layout is fixed at 8 x 2 x 2 volumes x 11 cosine bins.

    ``radius`` (absolute) takes precedence over ``radius_frac`` (fraction of
    the bounding-box diagonal).
    """

    radius_frac: float = 0.05
    radius: float = None

    def resolve_radius(self, mesh):
        r = self.radius if self.radius is not None else self.radius_frac * mesh.bounding_box_diagonal()
        if not r > 0:
            raise ValueError(f"SHOT radius must be positive, got {r}")
        return float(r)


@dataclass(frozen=True)
class DescriptorField:
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def q(self):
        return self.values.shape[1]


def _neighbor_pairs(points, radius):
    """Directed (centre, neighbor) pairs within ``radius``, sorted, self pairs excluded."""
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    both = np.concatenate([pairs, pairs[:, ::-1]]) if len(pairs) else np.empty((0, 2), dtype=np.int64)
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    offsets = points[both[:, 1]] - points[both[:, 0]]
    dist = np.linalg.norm(offsets, axis=1)
    keep = dist > 0
    return both[keep, 0], both[keep, 1], offsets[keep], dist[keep]


def _disambiguate(axis, proj, weights, centre, fallback):
    """Flip ``axis`` (n, 3) so most neighbor projections are positive.

    Count ties fall back to the weighted projection sum and then to the
    sign of ``fallback`` (n,) when given.
    """
    n = len(axis)
    votes = np.bincount(centre, np.sign(proj), minlength=n)
    weighted = np.bincount(centre, weights * proj, minlength=n)
    sign = np.sign(votes)
    if fallback is not None:
        sign = np.where(sign == 0, np.sign(fallback), sign)
    sign = np.where(sign == 0, np.sign(weighted), sign)
    sign[sign == 0] = 1.0
    return axis * sign[:, None]


def local_reference_frames(mesh, radius, pairs=None):
    """Repeatable local frames (n, 3, 3) with rows x, y, z.

    Built from the distance-weighted covariance of neighbor offsets around
    each vertex; z is the direction of least variance and is oriented by
    majority vote, ties resolved towards the vertex normal.
    """
    n = mesh.n_vertices
    centre, nbr, off, dist = pairs if pairs is not None else _neighbor_pairs(mesh.vertices, radius)
    w = radius - dist
    cov = np.zeros((n, 3, 3))
    outer = (w[:, None, None] * off[:, :, None] * off[:, None, :]).reshape(-1, 9)
    for c in range(9):
        cov.reshape(n, 9)[:, c] = np.bincount(centre, outer[:, c], minlength=n)
    wsum = np.bincount(centre, w, minlength=n)
    cov /= np.where(wsum > 0, wsum, 1.0)[:, None, None]
    _, vecs = np.linalg.eigh(cov)
    x, z = vecs[:, :, 2], vecs[:, :, 0]
    normals = mesh.vertex_normals()
    x = _disambiguate(x, np.einsum("ij,ij->i", off, x[centre]), w, centre, None)
    z = _disambiguate(z, np.einsum("ij,ij->i", off, z[centre]), w, centre,
                      np.einsum("ij,ij->i", z, normals))
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def _linear_cells(u, nbins):
    """Lower cell, upper cell and upper weight for a clamped bin coordinate."""
    u = np.clip(u, 0.0, nbins - 1)
    lo = np.minimum(np.floor(u).astype(np.int64), nbins - 2)
    return lo, lo + 1, u - lo


def compute_shot(mesh, radius=None, config=None):
    """SHOT descriptors (n x 352) of every mesh vertex.

    Neighbors are all other vertices within ``radius`` (Euclidean). Each
    neighbor contributes unit mass, spread by quadrilinear interpolation over
    azimuth (circular), elevation, radial shell and the cosine between its
    normal and the frame's z axis. Rows are l2-normalised; vertices without
    neighbors get the zero descriptor (counted in ``meta['n_empty']``).
    """
    config = config or ShotConfig()
    if radius is None:
        radius = config.resolve_radius(mesh)
    if not radius > 0:
        raise ValueError(f"SHOT radius must be positive, got {radius}")
    n = mesh.n_vertices
    pairs = _neighbor_pairs(mesh.vertices, radius)
    centre, nbr, off, dist = pairs
    frames = local_reference_frames(mesh, radius, pairs)
    local = np.einsum("pij,pj->pi", frames[centre], off)
    normals = mesh.vertex_normals()

    cos = np.clip(np.einsum("ij,ij->i", frames[centre, 2], normals[nbr]), -1.0, 1.0)
    c0, c1, tc = _linear_cells((cos + 1.0) / 2.0 * N_COS_BINS - 0.5, N_COS_BINS)
    r0, r1, tr = _linear_cells(dist / radius * N_RADIAL - 0.5, N_RADIAL)
    polar = np.arccos(np.clip(local[:, 2] / dist, -1.0, 1.0))
    e0, e1, te = _linear_cells(polar / (np.pi / N_ELEVATION) - 0.5, N_ELEVATION)
    azimuth = np.mod(np.arctan2(local[:, 1], local[:, 0]), 2 * np.pi)
    ua = azimuth / (2 * np.pi / N_AZIMUTH) - 0.5
    a_floor = np.floor(ua)
    a0 = np.mod(a_floor, N_AZIMUTH).astype(np.int64)
    a1 = np.mod(a0 + 1, N_AZIMUTH)
    ta = ua - a_floor

    hist = np.zeros(n * SHOT_DIM)
    for a, wa in ((a0, 1 - ta), (a1, ta)):
        for e, we in ((e0, 1 - te), (e1, te)):
            for r, wr in ((r0, 1 - tr), (r1, tr)):
                vol = (a * N_ELEVATION + e) * N_RADIAL + r
                for c, wc in ((c0, 1 - tc), (c1, tc)):
                    idx = centre * SHOT_DIM + vol * N_COS_BINS + c
                    hist += np.bincount(idx, wa * we * wr * wc, minlength=n * SHOT_DIM)
    hist = hist.reshape(n, SHOT_DIM)
    norms = np.linalg.norm(hist, axis=1, keepdims=True)
    hist = np.divide(hist, norms, out=np.zeros_like(hist), where=norms > 0)
    n_empty = int(np.count_nonzero(norms.ravel() == 0))
    meta = {"radius": float(radius), "n_empty": n_empty,
            "layout": f"{N_AZIMUTH}x{N_ELEVATION}x{N_RADIAL}x{N_COS_BINS}"}
    return DescriptorField(hist, meta)


def compute_hks(basis, times):
    """Heat kernel signature ``sum_i exp(-lambda_i t) phi_i(x)^2`` for each time."""
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if times.size == 0 or np.any(times <= 0):
        raise ValueError("HKS times must be positive")
    if basis.k < 2:
        raise ValueError("HKS needs at least two eigenpairs")
    decay = np.exp(-np.outer(basis.eigenvalues, times))
    values = (basis.eigenfunctions ** 2) @ decay
    return DescriptorField(values, {"times": times.tolist()})

"""Instances and oracles shared by the unit and acceptance tests."""

import numpy as np

from fmcorr import shapes
from fmcorr.fmnet import ShapeBundle, SiameseConfig, TrainPair, init_params
from fmcorr.spectral import build_fem_laplacian, compute_eigenbasis, fix_signs


def tiny_pair(n=25, k=5, q=4, seed=1):
    """Near-isometric pair with random q-dimensional descriptors."""
    m = shapes.blob(n, seed=seed)
    m2 = shapes.bend(m, 2.0)

    def bundle(mesh, s):
        basis = compute_eigenbasis(build_fem_laplacian(mesh), k)
        return ShapeBundle(basis, np.random.default_rng(s).normal(size=(n, q)), mesh)

    return TrainPair(bundle(m, seed + 1), bundle(m2, seed + 2), np.arange(n))


def perturbed_params(q=4, n_blocks=2, seed=0, scale=0.3):
    """Generic (non-identity) parameters so every gradient entry is exercised."""
    g = np.random.default_rng(seed)
    return init_params(q, seed, n_blocks).map(lambda a: a + scale * g.normal(size=a.shape))


def tiny_siamese_config(n=25):
    sim = np.column_stack([np.arange(10), np.arange(10)])
    dis = np.column_stack([np.arange(10), (np.arange(10) + 7) % n])
    return SiameseConfig(sim, dis, gamma=0.4, margin=3.0)


def finite_difference_check(loss_fn, params, grads, h=1e-5, floor=1e-8):
    """Worst relative error of ``grads`` against central differences of ``loss_fn``.

    Entries whose analytic gradient is below ``floor`` in magnitude are skipped.
    Returns ``(worst, n_checked)``.
    """
    worst, checked = 0.0, 0
    for (_, a), (_, ga) in zip(params.items(), grads.items()):
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            up = loss_fn(params)
            a[idx] = old - h
            down = loss_fn(params)
            a[idx] = old
            fd = (up - down) / (2 * h)
            if abs(ga[idx]) >= floor:
                worst = max(worst, abs(fd - ga[idx]) / max(abs(fd), abs(ga[idx])))
                checked += 1
    return worst, checked


def element_assembly(mesh):
    """Stiffness from hat-function gradients, one triangle at a time, and lumped mass."""
    n = mesh.n_vertices
    W = np.zeros((n, n))
    A = np.zeros(n)
    for tri in mesh.faces:
        p = mesh.vertices[tri]
        e1, e2 = p[1] - p[0], p[2] - p[0]
        # gradients of the three barycentric coordinates in the triangle plane
        M = np.array([e1, e2])
        metric_inv = np.linalg.inv(M @ M.T)
        g1, g2 = metric_inv @ M
        grads = [-(g1 + g2), g1, g2]
        area = 0.5 * np.linalg.norm(np.cross(e1, e2))
        for a in range(3):
            A[tri[a]] += area / 3.0
            for b in range(3):
                W[tri[a], tri[b]] += area * grads[a] @ grads[b]
    return W, A


def dense_oracle(mesh, k):
    """Independent path: element-assembled matrices and a symmetric standard eigenproblem."""
    W, A = element_assembly(mesh)
    s = 1.0 / np.sqrt(A)
    vals, vecs = np.linalg.eigh(s[:, None] * W * s[None, :])
    vecs = s[:, None] * vecs
    return vals[:k], fix_signs(vecs[:, :k])

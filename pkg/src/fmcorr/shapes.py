"""Synthetic meshes for tests, demos and smoke training runs."""

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import TriMesh


def icosphere(subdivisions=2, radius=1.0):
    """Unit icosphere; 12, 42, 162, 642, ... vertices for 0, 1, 2, 3, ... subdivisions."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriMesh(radius * np.array(verts), np.array(faces))


def grid(nx=5, ny=5, spacing=1.0):
    """Planar ``nx`` x ``ny`` vertex grid in the z=0 plane, two triangles per cell."""
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing, indexing="ij")
    verts = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)])
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a, b = i * ny + j, (i + 1) * ny + j
            faces += [(a, b, b + 1), (a, b + 1, a + 1)]
    return TriMesh(verts, np.array(faces))


def strip(n=4, spacing=1.0, height=0.5):
    """Triangle strip whose bottom row is ``n`` collinear vertices ``spacing`` apart.

    Vertices ``0..n-1`` lie on the x axis; the ``n - 1`` top-row vertices sit
    above the gaps, so the shortest edge path between bottom vertices runs
    along the bottom row.
    """
    bottom = np.column_stack([np.arange(n) * spacing, np.zeros(n), np.zeros(n)])
    top = np.column_stack([(np.arange(n - 1) + 0.5) * spacing, np.full(n - 1, height), np.zeros(n - 1)])
    faces = [(i, i + 1, n + i) for i in range(n - 1)]
    faces += [(i + 1, n + i + 1, n + i) for i in range(n - 2)]
    return TriMesh(np.vstack([bottom, top]), np.array(faces))


def sphere_points(n):
    """``n`` near-uniform points on the unit sphere (Fibonacci lattice)."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5 ** 0.5) * i
    return np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])


def hull_mesh(points):
    """Closed, outward-oriented triangulation of points in convex position."""
    points = np.asarray(points, dtype=float)
    hull = ConvexHull(points)
    faces = hull.simplices.copy()
    centre = points.mean(axis=0)
    v = points[faces]
    normal = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    inward = np.einsum("ij,ij->i", normal, v[:, 0] - centre) < 0
    faces[inward] = faces[inward][:, [0, 2, 1]]
    return TriMesh(points, faces)


def blob(n=300, axes=(1.6, 1.0, 0.7), bumps=5, amplitude=0.12, seed=0):
    """Asymmetric closed surface: an ellipsoid with a few Gaussian bumps.

    The triangulation is the convex hull of a Fibonacci lattice, pushed out
    radially, so connectivity stays valid whatever the bump field.
    """
    rng = np.random.default_rng(seed)
    u = sphere_points(n)
    connectivity = hull_mesh(u).faces
    centres = rng.normal(size=(bumps, 3))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    widths = rng.uniform(0.3, 0.6, size=bumps)
    heights = amplitude * rng.uniform(0.5, 1.0, size=bumps)
    cos = u @ centres.T
    r = 1.0 + np.sum(heights * np.exp(-(1.0 - cos) / widths ** 2), axis=1)
    verts = u * r[:, None] * np.asarray(axes)
    return TriMesh(verts, connectivity)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def bend(mesh, radius=3.0):
    """Bend the mesh in the xy-plane around a circle of the given radius.

    The plane y = 0 (after centring) is mapped isometrically onto the arc;
    other points are stretched by ``(radius - y) / radius``, so large radii
    give a near-isometric pose change.
    """
    v = mesh.vertices - mesh.vertices.mean(axis=0)
    theta = v[:, 0] / radius
    r = radius - v[:, 1]
    out = np.column_stack([r * np.sin(theta), radius - r * np.cos(theta), v[:, 2]])
    return TriMesh(out, mesh.faces)


def cube():
    verts = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    return hull_mesh(verts)

"""Graph-geodesic distance rows and the normalized geodesic error."""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra


@dataclass(frozen=True)
class DistanceRows:
    """Distances from a list of source vertices to every vertex of a mesh."""

    source_indices: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.source_indices, dtype=np.int64)
        object.__setattr__(self, "source_indices", src)
        object.__setattr__(self, "_lookup", {int(s): i for i, s in enumerate(src)})

    @property
    def n_unreachable(self):
        return int(np.count_nonzero(~np.isfinite(self.distances)))

    def has(self, source):
        return int(source) in self._lookup

    def row(self, source):
        try:
            return self.distances[self._lookup[int(source)]]
        except KeyError:
            raise KeyError(f"no distance row for vertex {source}") from None

    def rows(self, sources):
        """Distance rows for each entry of ``sources`` as a (len(sources), n) array."""
        try:
            pos = [self._lookup[int(s)] for s in np.ravel(sources)]
        except KeyError as exc:
            raise KeyError(f"no distance row for vertex {exc.args[0]}") from None
        return self.distances[pos]


def edge_graph(mesh):
    """Sparse symmetric graph of mesh edges weighted by Euclidean length."""
    e = mesh.edges()
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    g = sparse.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    return g + g.T


def geodesic_distances(mesh, sources, graph=None):
    """Shortest edge-path distances from each source vertex to every vertex.

    Vertices in another connected component get ``inf``; see
    :attr:`DistanceRows.n_unreachable`.
    """
    src = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    if src.size == 0:
        raise ValueError("at least one source vertex is required")
    if src.min() < 0 or src.max() >= mesh.n_vertices:
        raise IndexError(f"source index out of range for a mesh with {mesh.n_vertices} vertices")
    if graph is None:
        graph = edge_graph(mesh)
    d = dijkstra(graph, directed=False, indices=src)
    return DistanceRows(src, np.atleast_2d(d))


class DistanceCache:
    """Lazily computed, memoised distance rows on one mesh."""

    def __init__(self, mesh):
        self.mesh = mesh
        self._graph = edge_graph(mesh)
        self._rows = {}

    def rows(self, sources):
        src = np.asarray(sources, dtype=np.int64).ravel()
        missing = sorted({int(s) for s in src} - self._rows.keys())
        if missing:
            new = geodesic_distances(self.mesh, missing, graph=self._graph)
            for s, r in zip(missing, new.distances):
                r.setflags(write=False)
                self._rows[s] = r
        return np.stack([self._rows[int(s)] for s in src]) if src.size else np.empty((0, self.mesh.n_vertices))

    def distance_rows(self, sources):
        src = np.unique(np.asarray(sources, dtype=np.int64))
        return DistanceRows(src, self.rows(src))


def geodesic_error(predicted, truth, rows, target_area):
    """Normalized geodesic error ``d(y, y*) / sqrt(area)`` of one predicted match."""
    if target_area <= 0:
        raise ValueError("target_area must be positive")
    return float(rows.row(truth)[int(predicted)] / np.sqrt(target_area))


def geodesic_errors(predicted, truth, rows, target_area):
    """Vectorised :func:`geodesic_error` over arrays of matches."""
    if target_area <= 0:
        raise ValueError("target_area must be positive")
    predicted = np.asarray(predicted, dtype=np.int64)
    d = rows.rows(truth)[np.arange(len(predicted)), predicted]
    return d / np.sqrt(target_area)

"""Triangle meshes, file readers/writers and nearest-neighbor injections."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import MeshFormatError

# a face is degenerate if its area is below this fraction of its longest edge squared
DEGENERATE_AREA_RTOL = 1e-12


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def face_areas(vertices, faces):
    e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


class TriMesh:
    """Immutable triangle mesh with lumped (barycentric) vertex areas.

    Parameters
    ----------
    vertices : array-like of shape (n, 3)
    faces : array-like of shape (m, 3)
        Zero-based vertex indices. Degenerate or out-of-range faces raise
        :class:`MeshFormatError`.
    """

    def __init__(self, vertices, faces):
        v = np.asarray(vertices, dtype=np.float64)
        f = np.asarray(faces)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshFormatError(f"vertices must have shape (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshFormatError(f"faces must have shape (m, 3), got {f.shape}")
        if not np.issubdtype(f.dtype, np.integer):
            if not np.all(np.mod(f, 1) == 0):
                raise MeshFormatError("face indices must be integers")
        f = f.astype(np.int64)
        n, m = len(v), len(f)
        if n < 3:
            raise MeshFormatError(f"a mesh needs at least 3 vertices, got {n}")
        if m < 1:
            raise MeshFormatError("a mesh needs at least one face")
        if not np.all(np.isfinite(v)):
            raise MeshFormatError("vertex coordinates must be finite")
        bad = np.flatnonzero(np.any((f < 0) | (f >= n), axis=1))
        if bad.size:
            raise MeshFormatError(f"face {bad[0]} has an out-of-range vertex index (n={n})", face=bad[0])
        rep = np.flatnonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))
        if rep.size:
            raise MeshFormatError(f"degenerate face {rep[0]}: repeated vertex index", face=rep[0])
        areas = face_areas(v, f)
        edges = v[f] - v[np.roll(f, 1, axis=1)]
        longest = np.max(np.einsum("fij,fij->fi", edges, edges), axis=1)
        flat = np.flatnonzero(areas <= DEGENERATE_AREA_RTOL * longest)
        if flat.size:
            raise MeshFormatError(f"degenerate face {flat[0]}: zero area", face=flat[0])

        self.vertices = _frozen(v)
        self.faces = _frozen(f)
        self.face_areas = _frozen(areas)
        self.vertex_areas = _frozen(np.bincount(f.ravel(), np.repeat(areas / 3.0, 3), minlength=n))
        self.total_area = float(self.vertex_areas.sum())

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def edges(self):
        """Unique undirected edges as an (e, 2) array with ``i < j``."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def vertex_normals(self):
        """Unit vertex normals: area-weighted mean of incident face normals."""
        v, f = self.vertices, self.faces
        # the unnormalised cross product already carries twice the face area
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        vn = np.zeros_like(v)
        for c in range(3):
            np.add.at(vn, f[:, c], fn)
        norm = np.linalg.norm(vn, axis=1, keepdims=True)
        return vn / np.where(norm > 0, norm, 1.0)

    def bounding_box_diagonal(self):
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def transformed(self, rotation=None, translation=None, scale=1.0):
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation).T
        if translation is not None:
            v = v + np.asarray(translation)
        return TriMesh(v, self.faces)

    def permuted(self, perm):
        """Return the same mesh with vertex ``i`` of the result equal to vertex ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return TriMesh(self.vertices[perm], inv[self.faces])

    def content_checksum(self):
        from .fmb import checksum

        return checksum(
            np.ascontiguousarray(self.vertices, dtype="<f8"),
            np.ascontiguousarray(self.faces, dtype="<i8"),
        )

    def __repr__(self):
        return f"TriMesh(n={self.n_vertices}, m={self.n_faces}, area={self.total_area:.6g})"


# --- readers ---------------------------------------------------------------


def _content_lines(text):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _floats(tokens, lineno, what):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise MeshFormatError(f"could not parse {what}: {' '.join(tokens)!r}", lineno) from None


def _ints(tokens, lineno, what):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise MeshFormatError(f"could not parse {what}: {' '.join(tokens)!r}", lineno) from None


def _build(vertices, faces, face_lines):
    try:
        return TriMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                       np.array(faces, dtype=np.int64).reshape(-1, 3))
    except MeshFormatError as exc:
        if exc.face is not None and face_lines:
            raise MeshFormatError(str(exc), face_lines[exc.face]) from None
        raise


def _parse_off(text):
    lines = list(_content_lines(text))
    if not lines:
        raise MeshFormatError("empty OFF file", 1)
    lineno, head = lines[0]
    tokens = head.split()
    if not tokens[0].endswith("OFF"):
        raise MeshFormatError("missing OFF header", lineno)
    if tokens[0] != "OFF":
        raise MeshFormatError(f"unsupported OFF variant {tokens[0]!r}", lineno)
    rest = tokens[1:]
    pos = 1
    if not rest:
        if len(lines) < 2:
            raise MeshFormatError("missing OFF counts line", lineno)
        lineno, counts = lines[1]
        rest = counts.split()
        pos = 2
    counts = _ints(rest[:3], lineno, "OFF counts")
    if len(counts) < 2:
        raise MeshFormatError("OFF counts line needs vertex and face counts", lineno)
    nv, nf = counts[0], counts[1]
    if len(lines) < pos + nv + nf:
        raise MeshFormatError(f"expected {nv} vertices and {nf} faces", lines[-1][0])
    vertices = []
    for lineno, line in lines[pos:pos + nv]:
        tok = line.split()
        if len(tok) < 3:
            raise MeshFormatError("vertex line needs 3 coordinates", lineno)
        vertices.append(_floats(tok[:3], lineno, "vertex"))
    faces, face_lines = [], []
    for lineno, line in lines[pos + nv:pos + nv + nf]:
        raw = line.split()
        head = _ints(raw[:1], lineno, "face")
        tok = head + _ints(raw[1:1 + head[0]], lineno, "face")
        if len(tok) < tok[0] + 1:
            raise MeshFormatError("truncated face record", lineno)
        if tok[0] != 3:
            raise MeshFormatError(f"non-triangle face with {tok[0]} vertices", lineno)
        idx = tok[1:4]
        if len(set(idx)) < 3:
            raise MeshFormatError(f"degenerate face {idx}: repeated vertex index", lineno)
        if min(idx) < 0 or max(idx) >= nv:
            raise MeshFormatError(f"face index out of range in {idx} (n={nv})", lineno)
        faces.append(idx)
        face_lines.append(lineno)
    return _build(vertices, faces, face_lines)


def _parse_obj(text):
    vertices, faces, face_lines = [], [], []
    for lineno, line in _content_lines(text):
        tok = line.split()
        if tok[0] == "v":
            if len(tok) < 4:
                raise MeshFormatError("vertex line needs 3 coordinates", lineno)
            vertices.append(_floats(tok[1:4], lineno, "vertex"))
        elif tok[0] == "f":
            if len(tok) != 4:
                raise MeshFormatError(f"non-triangle face with {len(tok) - 1} vertices", lineno)
            idx = _ints([t.split("/")[0] for t in tok[1:]], lineno, "face")
            nv = len(vertices)
            resolved = []
            for i in idx:
                j = i - 1 if i > 0 else nv + i
                if i == 0 or not 0 <= j < nv:
                    raise MeshFormatError(f"face index {i} out of range (n={nv})", lineno)
                resolved.append(j)
            if len(set(resolved)) < 3:
                raise MeshFormatError(f"degenerate face {resolved}: repeated vertex index", lineno)
            faces.append(resolved)
            face_lines.append(lineno)
    if not faces:
        raise MeshFormatError("OBJ file contains no faces")
    return _build(vertices, faces, face_lines)


def _parse_ply(text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError("missing ply magic", 1)
    elements = []  # (name, count, [properties])
    body = None
    for i, raw in enumerate(lines[1:], 2):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if tok[1:2] != ["ascii"]:
                raise MeshFormatError(f"only ASCII PLY is supported, got {' '.join(tok[1:])}", i)
        elif tok[0] == "element":
            elements.append((tok[1], _ints(tok[2:3], i, "element count")[0], []))
        elif tok[0] == "property":
            if not elements:
                raise MeshFormatError("property before element", i)
            elements[-1][2].append(tok[1:])
        elif tok[0] == "end_header":
            body = i
            break
        else:
            raise MeshFormatError(f"unexpected header line {raw!r}", i)
    if body is None:
        raise MeshFormatError("missing end_header", len(lines))
    data = [(j, ln.split()) for j, ln in enumerate(lines[body:], body + 1) if ln.strip()]
    cursor = 0
    vertices, faces, face_lines = [], [], []
    for name, count, props in elements:
        chunk = data[cursor:cursor + count]
        if len(chunk) < count:
            raise MeshFormatError(f"expected {count} {name} records", data[-1][0] if data else body)
        cursor += count
        if name == "vertex":
            names = [p[-1] for p in props]
            try:
                cols = [names.index(c) for c in ("x", "y", "z")]
            except ValueError:
                raise MeshFormatError("vertex element lacks x/y/z properties", body) from None
            for lineno, tok in chunk:
                vals = _floats(tok, lineno, "vertex")
                if len(vals) < len(props):
                    raise MeshFormatError("truncated vertex record", lineno)
                vertices.append([vals[c] for c in cols])
        elif name == "face":
            if len(props) != 1 or props[0][0] != "list":
                raise MeshFormatError("face element must hold a single list property", body)
            for lineno, tok in chunk:
                vals = _ints(tok, lineno, "face")
                if vals[0] != 3:
                    raise MeshFormatError(f"non-triangle face with {vals[0]} vertices", lineno)
                idx = vals[1:4]
                if len(idx) < 3:
                    raise MeshFormatError("truncated face record", lineno)
                if len(set(idx)) < 3:
                    raise MeshFormatError(f"degenerate face {idx}: repeated vertex index", lineno)
                if min(idx) < 0 or max(idx) >= len(vertices):
                    raise MeshFormatError(f"face index out of range in {idx}", lineno)
                faces.append(idx)
                face_lines.append(lineno)
    return _build(vertices, faces, face_lines)


_PARSERS = {"off": _parse_off, "obj": _parse_obj, "ply": _parse_ply, "ply-ascii": _parse_ply}


def load_mesh(data, format):
    """Parse mesh ``data`` (bytes or str) in ``format`` ('off', 'obj' or 'ply')."""
    try:
        parser = _PARSERS[format.lower()]
    except KeyError:
        raise ValueError(f"unknown mesh format {format!r}; expected one of OFF, OBJ, PLY") from None
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MeshFormatError(f"mesh data is not text: {exc}") from None
    return parser(data)


def read_mesh(path, format=None):
    if format is None:
        format = str(path).rsplit(".", 1)[-1]
    with open(path, "rb") as fh:
        return load_mesh(fh.read(), format)


def mesh_to_off(mesh):
    out = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
    out.extend(" ".join(repr(float(c)) for c in v) for v in mesh.vertices)
    out.extend(f"3 {a} {b} {c}" for a, b, c in mesh.faces)
    return ("\n".join(out) + "\n").encode()


def save_off(mesh, path):
    with open(path, "wb") as fh:
        fh.write(mesh_to_off(mesh))


# --- injections ------------------------------------------------------------


@dataclass(frozen=True)
class Injection:
    """Map from every vertex of a source mesh to a vertex of a target mesh."""

    target_indices: np.ndarray
    target_size: int

    @property
    def source_size(self):
        return len(self.target_indices)

    def __post_init__(self):
        idx = np.asarray(self.target_indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.target_size):
            raise ValueError("injection index out of range for the target mesh")
        object.__setattr__(self, "target_indices", _frozen(idx))


def nearest_rows(queries, points, candidates=4):
    """Index of the Euclidean-nearest row of ``points`` for each query row.

    Ties resolve to the lowest index. Low dimensions go through a k-d tree;
    the exact distances of a few candidates are then compared so that the
    tie-breaking does not depend on tree traversal order.
    """
    queries = np.asarray(queries, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0 or len(queries) == 0:
        raise ValueError("nearest-neighbor search needs non-empty inputs")
    if queries.shape[1] != points.shape[1]:
        raise ValueError("query and point dimensions differ")
    if points.shape[1] > 8:
        return _nearest_rows_blocked(queries, points)
    kk = min(candidates, len(points))
    _, idx = cKDTree(points).query(queries, k=kk)
    idx = idx.reshape(len(queries), kk)
    d2 = np.sum((points[idx] - queries[:, None, :]) ** 2, axis=2)
    dmin = d2.min(axis=1)
    best = np.where(d2 == dmin[:, None], idx, np.iinfo(np.int64).max).min(axis=1)
    # every candidate tied: there may be more equidistant points beyond the k-th
    full = np.flatnonzero(d2[:, -1] == dmin) if kk < len(points) else np.array([], dtype=int)
    if full.size:
        best[full] = _nearest_rows_blocked(queries[full], points)
    return best


def _nearest_rows_blocked(queries, points, budget=2**22):
    """Brute-force nearest rows via the Gram expansion, re-ranked exactly near ties."""
    sq_points = np.einsum("ij,ij->i", points, points)
    block = max(1, budget // max(1, len(points)))
    out = np.empty(len(queries), dtype=np.int64)
    for s in range(0, len(queries), block):
        q = queries[s:s + block]
        sq_q = np.einsum("ij,ij->i", q, q)
        d2 = sq_points[None, :] - 2.0 * (q @ points.T) + sq_q[:, None]
        dmin = d2.min(axis=1)
        # rounding in the expansion is bounded by a few ulps of the squared norms
        slack = 1e-9 * (sq_q + sq_points.max()) + 1e-300
        close = d2 <= (dmin + slack)[:, None]
        out[s:s + block] = np.argmax(close, axis=1)
        for r in np.flatnonzero(close.sum(axis=1) > 1):
            cand = np.flatnonzero(close[r])
            exact = np.sum((points[cand] - q[r]) ** 2, axis=1)
            out[s + r] = cand[np.argmin(exact)]
    return out


def nearest_neighbor_injection(source, target):
    """Map each source vertex to its Euclidean-nearest target vertex."""
    idx = nearest_rows(source.vertices, target.vertices)
    return Injection(idx, target.n_vertices)

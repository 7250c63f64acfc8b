"""Triangle mesh container, OBJ I/O and the surface-distance metric."""

import hashlib
import io

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree


class MeshError(ValueError):
    pass


class ObjParseError(MeshError):
    """Raised for malformed OBJ input; carries the 1-based line number."""

    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class TriMesh:
    """Indexed triangle surface with float64 positions.

    Positions and triangles are frozen (read-only arrays) after
    construction so meshes can be shared across threads. Normals and
    adjacency are derived lazily and cached.
    """

    def __init__(self, positions, triangles):
        pos = np.ascontiguousarray(positions, dtype=np.float64)
        tri = np.ascontiguousarray(triangles, dtype=np.int64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise MeshError("positions must be an (n, 3) array")
        if tri.size == 0:
            tri = tri.reshape(0, 3)
        if tri.ndim != 2 or tri.shape[1] != 3:
            raise MeshError("triangles must be an (m, 3) array")
        if tri.size and (tri.min() < 0 or tri.max() >= len(pos)):
            raise MeshError("triangle index out of range")
        if tri.size:
            a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
            bad = (a == b) | (b == c) | (a == c)
            if bad.any():
                raise MeshError(
                    f"degenerate triangle (repeated vertex index) at {np.flatnonzero(bad)[:8].tolist()}"
                )
        pos.setflags(write=False)
        tri.setflags(write=False)
        self.positions = pos
        self.triangles = tri
        self._normals = None
        self._isolated = None
        self._adj = None
        self._neighbors = None
        self._edges = None

    # -- basic measures -------------------------------------------------

    @property
    def vertex_count(self):
        return len(self.positions)

    @property
    def triangle_count(self):
        return len(self.triangles)

    def bbox(self):
        if not len(self.positions):
            raise MeshError("empty mesh has no bbox")
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def bbox_diagonal(self):
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def triangle_corners(self):
        t = self.triangles
        return self.positions[t[:, 0]], self.positions[t[:, 1]], self.positions[t[:, 2]]

    def triangle_areas(self):
        a, b, c = self.triangle_corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    # -- normals ---------------------------------------------------------

    def _accumulate_normals(self):
        a, b, c = self.triangle_corners()
        face = np.cross(b - a, c - a)  # magnitude = 2*area, so this is area weighting
        acc = np.zeros_like(self.positions)
        for k in range(3):
            np.add.at(acc, self.triangles[:, k], face)
        norms = np.linalg.norm(acc, axis=1)
        isolated = norms < 1e-300
        out = np.zeros_like(acc)
        ok = ~isolated
        out[ok] = acc[ok] / norms[ok, None]
        out.setflags(write=False)
        isolated.setflags(write=False)
        self._normals, self._isolated = out, isolated

    @property
    def vertex_normals(self):
        """Area-weighted unit vertex normals; zero rows for isolated vertices."""
        if self._normals is None:
            self._accumulate_normals()
        return self._normals

    @property
    def isolated_vertices(self):
        """Mask of vertices with no incident non-degenerate triangle."""
        if self._isolated is None:
            self._accumulate_normals()
        return self._isolated

    # -- adjacency --------------------------------------------------------

    @property
    def adjacency(self):
        """Symmetric sparse vertex adjacency; entry = incident triangle count per edge."""
        if self._adj is None:
            t = self.triangles
            i = np.concatenate([t[:, 0], t[:, 1], t[:, 1], t[:, 2], t[:, 2], t[:, 0]])
            j = np.concatenate([t[:, 1], t[:, 0], t[:, 2], t[:, 1], t[:, 0], t[:, 2]])
            n = self.vertex_count
            self._adj = sparse.csr_matrix(
                (np.ones(len(i)), (i, j)), shape=(n, n)
            )
        return self._adj

    def vertex_neighbors(self, v):
        if self._neighbors is None:
            self._neighbors = self.adjacency.tolil().rows
        return self._neighbors[v]

    def unique_edges(self):
        """(E, 2) array of vertex pairs, each sorted, lexicographically ordered."""
        if self._edges is None:
            t = self.triangles
            e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            e.sort(axis=1)
            self._edges = np.unique(e, axis=0)
        return self._edges

    def edge_lengths(self):
        e = self.unique_edges()
        return np.linalg.norm(self.positions[e[:, 0]] - self.positions[e[:, 1]], axis=1)

    def edge_face_counts(self):
        """Triangles incident to each edge, aligned with unique_edges()."""
        e = self.unique_edges()
        return np.asarray(self.adjacency[e[:, 0], e[:, 1]]).ravel().astype(np.int64)

    # -- identity ----------------------------------------------------------

    def triangle_hash(self):
        return hashlib.sha256(np.ascontiguousarray(self.triangles, dtype="<i8").tobytes()).hexdigest()

    def fingerprint(self):
        """Connectivity identity: vertex count plus a hash of the triangle list."""
        return {"vertex_count": self.vertex_count, "triangle_hash": self.triangle_hash()}

    def content_hash(self):
        """Full-content identity over positions and triangles (cache keying)."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.positions, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.triangles, dtype="<i8").tobytes())
        return h.hexdigest()

    def with_positions(self, positions):
        return TriMesh(positions, self.triangles)


def fingerprints_match(a, b):
    return (
        int(a["vertex_count"]) == int(b["vertex_count"])
        and a["triangle_hash"] == b["triangle_hash"]
    )


# ---------------------------------------------------------------------------
# OBJ I/O.  Only "v" and "f" records matter here; texture and material
# records are skipped on load and never written, which keeps vertex order
# (and hence index-based pad maps) exact.
# ---------------------------------------------------------------------------

def load_obj(data) -> TriMesh:
    """Parse Wavefront OBJ text (bytes or str). Polygons are fan-triangulated."""
    if isinstance(data, bytes):
        text = data.decode("utf-8", errors="replace")
    else:
        text = data
    positions = []
    faces = []
    face_lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ObjParseError("vertex record needs 3 coordinates", lineno)
            try:
                positions.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError:
                raise ObjParseError(f"bad vertex coordinate in {line!r}", lineno) from None
        elif tag == "f":
            if len(parts) < 4:
                raise ObjParseError("face record needs at least 3 indices", lineno)
            idx = []
            for token in parts[1:]:
                head = token.split("/")[0]
                try:
                    k = int(head)
                except ValueError:
                    raise ObjParseError(f"bad face index {token!r}", lineno) from None
                if k == 0:
                    raise ObjParseError("face index 0 is invalid (OBJ is 1-based)", lineno)
                idx.append(k)
            faces.append(idx)
            face_lines.append(lineno)
        # everything else (vn, vt, usemtl, o, g, s, mtllib, l, ...) is ignored
    if not positions:
        raise MeshError("OBJ contains no vertices")
    nv = len(positions)
    triangles = []
    for idx, lineno in zip(faces, face_lines):
        resolved = []
        for k in idx:
            r = k - 1 if k > 0 else nv + k
            if r < 0 or r >= nv:
                raise ObjParseError(f"face index {k} out of range (mesh has {nv} vertices)", lineno)
            resolved.append(r)
        for i in range(1, len(resolved) - 1):
            tri = (resolved[0], resolved[i], resolved[i + 1])
            if len(set(tri)) != 3:
                raise ObjParseError(f"degenerate face {idx}", lineno)
            triangles.append(tri)
    return TriMesh(np.array(positions), np.array(triangles, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: TriMesh) -> bytes:
    """Serialize to OBJ. %.17g keeps the load/save round trip exact."""
    out = io.StringIO()
    for p in mesh.positions:
        out.write("v %.17g %.17g %.17g\n" % (p[0], p[1], p[2]))
    for t in mesh.triangles:
        out.write("f %d %d %d\n" % (t[0] + 1, t[1] + 1, t[2] + 1))
    return out.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# Point-to-surface distance and the Hausdorff-RMS comparison metric.
# ---------------------------------------------------------------------------

def _closest_point_on_triangles(p, a, b, c):
    """Closest point on each triangle (a,b,c) to each point p.  All (k,3)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    result = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def settle(mask, value):
        m = mask & ~done
        result[m] = value[m]
        done[m] = True

    settle((d1 <= 0) & (d2 <= 0), a)  # vertex a
    settle((d3 >= 0) & (d4 <= d3), b)  # vertex b
    settle((d6 >= 0) & (d5 <= d6), c)  # vertex c

    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
    settle((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v_ab[:, None] * ab)  # edge ab

    vb = d5 * d2 - d1 * d6
    with np.errstate(divide="ignore", invalid="ignore"):
        w_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
    settle((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w_ac[:, None] * ac)  # edge ac

    va = d3 * d6 - d5 * d4
    denom_bc = (d4 - d3) + (d5 - d6)
    with np.errstate(divide="ignore", invalid="ignore"):
        w_bc = np.where(denom_bc != 0, (d4 - d3) / denom_bc, 0.0)
    settle((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + w_bc[:, None] * (c - b))  # edge bc

    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
    interior = a + v[:, None] * ab + w[:, None] * ac
    result[~done] = interior[~done]
    return result


class _SurfaceDistance:
    """Point-to-surface queries against one mesh, KD-tree accelerated."""

    def __init__(self, mesh: TriMesh):
        if mesh.triangle_count == 0:
            raise MeshError("cannot measure distance to a mesh without triangles")
        self.mesh = mesh
        a, b, c = mesh.triangle_corners()
        self.corners = (a, b, c)
        self.centroids = (a + b + c) / 3.0
        self.radius = np.max(
            np.maximum(
                np.linalg.norm(a - self.centroids, axis=1),
                np.maximum(
                    np.linalg.norm(b - self.centroids, axis=1),
                    np.linalg.norm(c - self.centroids, axis=1),
                ),
            )
        )
        self.tree = cKDTree(self.centroids)

    def distances(self, points):
        points = np.asarray(points, dtype=np.float64)
        a, b, c = self.corners
        _, nearest = self.tree.query(points)
        closest = _closest_point_on_triangles(
            points, a[nearest], b[nearest], c[nearest]
        )
        upper = np.linalg.norm(points - closest, axis=1)
        out = upper.copy()
        # candidate triangles: centroid within upper bound + max centroid radius
        balls = self.tree.query_ball_point(points, upper + self.radius + 1e-12)
        for i, cand in enumerate(balls):
            if len(cand) <= 1:
                continue
            cand = np.asarray(cand)
            p = np.repeat(points[i][None, :], len(cand), axis=0)
            cp = _closest_point_on_triangles(p, a[cand], b[cand], c[cand])
            out[i] = min(out[i], float(np.linalg.norm(cp - points[i], axis=1).min()))
        return out


def sample_surface(mesh: TriMesh, samples_per_triangle=10, seed=0):
    """Uniform area-weighted surface samples; deterministic for a given seed.

    The total budget is samples_per_triangle * triangle_count, distributed
    across triangles proportionally to area (largest-remainder rounding).
    """
    if mesh.triangle_count == 0:
        raise MeshError("cannot sample a mesh without triangles")
    areas = mesh.triangle_areas()
    total_area = areas.sum()
    budget = int(samples_per_triangle * mesh.triangle_count)
    if total_area <= 0:
        counts = np.full(mesh.triangle_count, samples_per_triangle, dtype=np.int64)
    else:
        raw = budget * areas / total_area
        counts = np.floor(raw).astype(np.int64)
        short = budget - counts.sum()
        if short > 0:
            order = np.argsort(-(raw - counts), kind="stable")
            counts[order[:short]] += 1
    rng = np.random.default_rng(seed)
    tri_idx = np.repeat(np.arange(mesh.triangle_count), counts)
    u = rng.random(len(tri_idx))
    v = rng.random(len(tri_idx))
    flip = u + v > 1
    u[flip] = 1 - u[flip]
    v[flip] = 1 - v[flip]
    a, b, c = mesh.triangle_corners()
    a, b, c = a[tri_idx], b[tri_idx], c[tri_idx]
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def directed_hausdorff_rms(a: TriMesh, b: TriMesh, samples_per_triangle=10, seed=0):
    """RMS of point-to-surface distances from samples on `a` to the surface of `b`."""
    if a.triangle_count == 0 or b.triangle_count == 0:
        raise MeshError("hausdorff_rms requires two non-empty meshes")
    pts = sample_surface(a, samples_per_triangle, seed)
    d = _SurfaceDistance(b).distances(pts)
    # numerical floor: samples lying on the other surface measure exactly zero
    floor = 1e-12 * max(a.bbox_diagonal(), b.bbox_diagonal())
    d[d < floor] = 0.0
    return float(np.sqrt(np.mean(d * d)))


def hausdorff_rms(a: TriMesh, b: TriMesh, samples_per_triangle=10, seed=0):
    """Symmetric surface RMS distance: max of the two directed RMS values."""
    return max(
        directed_hausdorff_rms(a, b, samples_per_triangle, seed),
        directed_hausdorff_rms(b, a, samples_per_triangle, seed),
    )


def vertex_surface_distances(a: TriMesh, b: TriMesh):
    """Distance from each vertex of `a` to the surface of `b` (heat-map values)."""
    if b.triangle_count == 0:
        raise MeshError("target mesh has no triangles")
    d = _SurfaceDistance(b).distances(a.positions)
    floor = 1e-12 * max(a.bbox_diagonal(), b.bbox_diagonal())
    d[d < floor] = 0.0
    return d

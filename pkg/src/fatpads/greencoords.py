"""Green Coordinates over a closed triangle cage.

Binding computes, for every mesh vertex inside the cage, a dense weight
phi per cage vertex and psi per cage triangle from the closed-form
surface integrals of the 3D Green's function (no quadrature).
Evaluation recombines them with deformed cage geometry:

    V_gc = phi @ C' + psi @ (s * n')

where s is each face's stretch factor and n' its deformed unit normal.
Interior vertices reproduce exactly at rest; vertices outside the cage
receive no binding and stay at their rest positions, which keeps the
rest of the head static when the cage covers only the face.
"""

import logging
import struct

import numpy as np

from .cage import check_cage
from .mesh import _closest_point_on_triangles

log = logging.getLogger(__name__)

_MAGIC = b"FPGC0001"

# distance (relative to the bbox diagonal) below which a vertex counts
# as lying on a cage face, and the wider band within which it is pushed
# away from the cage surface before integration
ON_FACE_EPS = 1e-8
SURFACE_BAND = 5e-7

_TINY = np.finfo(np.float64).tiny


class GCError(ValueError):
    """Raised for invalid bindings, cage geometry, or evaluation input."""


class GCBinding:
    """Dense Green-coordinate weights for one mesh against one cage.

    phi is (n_mesh, n_cage_verts), psi is (n_mesh, n_cage_tris); rows of
    exterior vertices are zero and flagged out in `interior`. Rest face
    data (edge vectors, unit normals, areas) feeds the per-face stretch
    factor during evaluation.
    """

    __slots__ = ("phi", "psi", "interior", "rest_positions",
                 "cage_triangles", "rest_edges", "rest_normals",
                 "rest_areas", "mesh_fingerprint", "cage_hash")

    def __init__(self, phi, psi, interior, rest_positions, cage_triangles,
                 rest_edges, rest_normals, rest_areas, mesh_fingerprint,
                 cage_hash):
        self.phi = np.asarray(phi, dtype=np.float64)
        self.psi = np.asarray(psi, dtype=np.float64)
        self.interior = np.asarray(interior, dtype=bool)
        self.rest_positions = np.asarray(rest_positions, dtype=np.float64)
        self.cage_triangles = np.asarray(cage_triangles, dtype=np.int64)
        self.rest_edges = np.asarray(rest_edges, dtype=np.float64)
        self.rest_normals = np.asarray(rest_normals, dtype=np.float64)
        self.rest_areas = np.asarray(rest_areas, dtype=np.float64)
        self.mesh_fingerprint = dict(mesh_fingerprint)
        self.cage_hash = str(cage_hash)
        n, mv = self.phi.shape
        mt = self.psi.shape[1]
        if self.psi.shape != (n, mt) or self.interior.shape != (n,) \
                or self.rest_positions.shape != (n, 3) \
                or self.cage_triangles.shape != (mt, 3) \
                or self.rest_edges.shape != (mt, 2, 3) \
                or self.rest_normals.shape != (mt, 3) \
                or self.rest_areas.shape != (mt,):
            raise GCError("binding arrays have inconsistent shapes")

    @property
    def mesh_vertex_count(self):
        return self.phi.shape[0]

    @property
    def cage_vertex_count(self):
        return self.phi.shape[1]

    @property
    def cage_triangle_count(self):
        return self.psi.shape[1]


def _edge_integral(p, a, b):
    """Closed-form edge term of the GC surface integrals, batched.

    The field point sits at the origin; p is its foot on the face plane
    (or the origin itself for the second integral family). All inputs
    (k, 3), output (k,). Guards clamp the arccos arguments, floor the
    log argument, and keep denominators positive; sin(theta) == 0 rows
    vanish through the sign factor exactly as the limit does.
    """
    ba = b - a
    pa = p - a
    alpha = np.arccos(np.clip(
        np.einsum("ij,ij->i", ba, pa)
        / np.maximum(np.linalg.norm(ba, axis=1)
                     * np.linalg.norm(pa, axis=1), _TINY), -1.0, 1.0))
    ap = a - p
    bp = b - p
    beta = np.arccos(np.clip(
        np.einsum("ij,ij->i", ap, bp)
        / np.maximum(np.linalg.norm(ap, axis=1)
                     * np.linalg.norm(bp, axis=1), _TINY), -1.0, 1.0))
    sin_a = np.sin(alpha)
    lam = np.einsum("ij,ij->i", pa, pa) * sin_a ** 2
    # lam is the squared distance from p to the edge line; when p is
    # (numerically) on the line the swept triangle degenerates and the
    # integral vanishes. All three collinear limits (p beyond either
    # endpoint or between them) show up as sin(alpha) ~ 0, and arccos
    # rounding can inflate an exact zero to ~1e-8, so the test must be
    # relative; the absolute floor catches p == corner exactly.
    degenerate = (sin_a ** 2 <= 1e-14) | (lam <= 1e-28)
    lam = np.where(degenerate, 1.0, lam)
    c = np.einsum("ij,ij->i", p, p)
    sqrt_c = np.sqrt(c)
    sqrt_lam = np.sqrt(lam)

    def antideriv(theta):
        s = np.sin(theta)
        cos_t = np.cos(theta)
        denom = np.maximum(
            c * (1.0 + cos_t) + lam
            + np.sqrt(np.maximum(lam * (lam + c * s * s), 0.0)), _TINY)
        arg = (2.0 * sqrt_lam * s * s
               / np.maximum((1.0 - cos_t) ** 2, _TINY)
               * (1.0 - 2.0 * c * cos_t / denom))
        val = (sqrt_lam * np.log(np.maximum(arg, _TINY))
               + 2.0 * sqrt_c * np.arctan2(sqrt_c * cos_t,
                                           np.sqrt(lam + s * s * c)))
        return -0.5 * np.sign(s) * val

    theta = np.pi - alpha
    part = antideriv(theta) - antideriv(theta - beta) - sqrt_c * beta
    return np.where(degenerate, 0.0, -np.abs(part) / (4.0 * np.pi))


def _face_coords(points, corners, normal):
    """phi contributions (k, 3) for one face's corners and psi (k,)."""
    vj = corners[None, :, :] - points[:, None, :]
    foot = np.einsum("ij,j->i", vj[:, 0], normal)[:, None] * normal
    origin = np.zeros_like(foot)
    k = len(points)
    sign = np.empty((k, 3))
    one = np.empty((k, 3))
    two = np.empty((k, 3))
    edge_n = np.empty((k, 3, 3))
    for l in range(3):
        v0 = vj[:, l]
        v1 = vj[:, (l + 1) % 3]
        sign[:, l] = np.sign(np.einsum(
            "ij,j->i", np.cross(v0 - foot, v1 - foot), normal))
        one[:, l] = _edge_integral(foot, v0, v1)
        two[:, l] = _edge_integral(origin, v1, v0)
        q = np.cross(v1, v0)
        edge_n[:, l] = q / np.maximum(
            np.linalg.norm(q, axis=1, keepdims=True), _TINY)
    total = -np.abs(np.einsum("ij,ij->i", sign, one))
    psi = -total
    w = total[:, None] * normal + np.einsum("ijk,ij->ik", edge_n, two)
    usable = np.linalg.norm(w, axis=1) > 1e-14
    phi = np.zeros((k, 3))
    for l in range(3):
        num = np.einsum("ij,ij->i", edge_n[:, (l + 1) % 3], w)
        den = np.einsum("ij,ij->i", edge_n[:, (l + 1) % 3], vj[:, l])
        good = usable & (np.abs(den) > _TINY)
        phi[:, l] = np.where(good, num / np.where(good, den, 1.0), 0.0)
    return phi, psi


def winding_numbers(points, cage_vertices, cage_triangles):
    """Generalized winding number of each point: ~1 inside, ~0 outside."""
    points = np.asarray(points, dtype=np.float64)
    omega = np.zeros(len(points))
    for tri in np.asarray(cage_triangles, dtype=np.int64):
        a = cage_vertices[tri[0]] - points
        b = cage_vertices[tri[1]] - points
        c = cage_vertices[tri[2]] - points
        la = np.linalg.norm(a, axis=1)
        lb = np.linalg.norm(b, axis=1)
        lc = np.linalg.norm(c, axis=1)
        det = np.einsum("ij,ij->i", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("ij,ij->i", a, b) * lc
               + np.einsum("ij,ij->i", b, c) * la
               + np.einsum("ij,ij->i", c, a) * lb)
        omega += 2.0 * np.arctan2(det, den)
    return omega / (4.0 * np.pi)


def _face_frames(vertices, triangles):
    """Edge vectors, unit normals, and areas per cage triangle."""
    corners = vertices[triangles]
    u = corners[:, 1] - corners[:, 0]
    v = corners[:, 2] - corners[:, 0]
    crossed = np.cross(u, v)
    doubled = np.linalg.norm(crossed, axis=1)
    if np.any(doubled <= 0.0):
        raise GCError("cage has a zero-area triangle")
    normals = crossed / doubled[:, None]
    edges = np.stack([u, v], axis=1)
    return edges, normals, 0.5 * doubled


def bind(mesh, cage):
    """Compute Green-coordinate weights of every mesh vertex in the cage.

    The cage must be a closed outward-oriented manifold (checked).
    Vertices on a cage face raise; vertices hugging the cage surface are
    pushed away from their closest surface point before integration
    (logged) so the integrals stay well conditioned. Proximity to a mere
    face-plane extension is left alone: it is harmless by itself, and
    pushing such a vertex can strand it near the line through a cage
    edge where the closed form degrades. Exterior vertices (winding
    number below 1/2) are left unbound and frozen. The finished binding
    is self-checked: interior phi rows sum to 1 within 1e-6 and
    reproduce the rest positions within 1e-6 of the bbox diagonal.
    """
    check_cage(cage)
    diag = mesh.bbox_diagonal()
    if not diag > 0.0:
        raise GCError("mesh has no extent")
    scale = 1.0 / diag
    cage_v = cage.vertices * scale
    points = mesh.positions * scale
    edges, normals, areas = _face_frames(cage_v, cage.triangles)

    corners = cage_v[cage.triangles]
    dist = np.full(len(points), np.inf)
    closest = np.zeros_like(points)
    nearest = np.zeros(len(points), dtype=np.int64)
    for t in range(len(cage.triangles)):
        a, b, c = corners[t]
        cp = _closest_point_on_triangles(
            points, np.broadcast_to(a, points.shape),
            np.broadcast_to(b, points.shape),
            np.broadcast_to(c, points.shape))
        d = np.linalg.norm(points - cp, axis=1)
        better = d < dist
        dist[better] = d[better]
        closest[better] = cp[better]
        nearest[better] = t
    if np.any(dist < ON_FACE_EPS):
        vid = int(np.argmin(dist))
        raise GCError(
            f"mesh vertex {vid} lies on cage triangle {nearest[vid]}")
    near = dist < SURFACE_BAND
    if np.any(near):
        idx = np.nonzero(near)[0]
        away = (points[idx] - closest[idx]) / dist[idx][:, None]
        points[idx] = closest[idx] + away * SURFACE_BAND
        log.info("pushed %d mesh vertices off the cage surface before "
                 "binding", len(idx))

    interior = winding_numbers(points, cage_v, cage.triangles) > 0.5
    inside = np.nonzero(interior)[0]
    n = mesh.vertex_count
    phi = np.zeros((n, len(cage_v)))
    psi = np.zeros((n, len(cage.triangles)))
    probes = points[inside]
    for t, tri in enumerate(cage.triangles):
        contrib, column = _face_coords(probes, cage_v[tri], normals[t])
        for l in range(3):
            phi[inside, tri[l]] += contrib[:, l]
        psi[inside, t] = column

    binding = GCBinding(phi, psi * diag, interior, mesh.positions,
                        cage.triangles, edges * diag, normals,
                        areas * diag * diag, mesh.fingerprint(),
                        cage.content_hash())

    if len(inside):
        drift = np.abs(phi[inside].sum(axis=1) - 1.0)
        if drift.max() > 1e-6:
            vid = int(inside[np.argmax(drift)])
            raise GCError(f"phi of vertex {vid} sums to 1{drift.max():+.2e};"
                          " a mesh vertex sits too close to the cage")
        recon = evaluate(binding, cage.vertices)
        err = np.linalg.norm(recon[inside] - mesh.positions[inside], axis=1)
        if err.max() > 1e-6 * diag:
            vid = int(inside[np.argmax(err)])
            raise GCError(f"binding fails rest reproduction at vertex {vid} "
                          f"(error {err.max():.2e})")
    return binding


def evaluate(binding, cage_vertices):
    """Deformed positions of all mesh vertices for deformed cage vertices.

    Exterior vertices return their rest positions. Degenerate deformed
    faces (zero area) fall back to their rest normals and are logged;
    their stretch factor stays finite.
    """
    deformed = np.asarray(cage_vertices, dtype=np.float64)
    if deformed.shape != (binding.cage_vertex_count, 3):
        raise GCError(
            f"deformed cage has shape {deformed.shape}; binding expects "
            f"({binding.cage_vertex_count}, 3)")
    if not np.all(np.isfinite(deformed)):
        raise GCError("deformed cage vertices must be finite")
    tris = binding.cage_triangles
    u = deformed[tris[:, 1]] - deformed[tris[:, 0]]
    v = deformed[tris[:, 2]] - deformed[tris[:, 0]]
    crossed = np.cross(u, v)
    doubled = np.linalg.norm(crossed, axis=1)
    span = max(float(np.abs(deformed).max()), 1.0)
    degenerate = doubled <= 1e-12 * span * span
    if np.any(degenerate):
        log.warning("%d deformed cage faces are degenerate; using their "
                    "rest normals", int(degenerate.sum()))
    normals = np.where(degenerate[:, None], binding.rest_normals,
                       crossed / np.maximum(doubled, _TINY)[:, None])
    ru = binding.rest_edges[:, 0]
    rv = binding.rest_edges[:, 1]
    squared = (np.einsum("ij,ij->i", u, u) * np.einsum("ij,ij->i", rv, rv)
               - 2.0 * np.einsum("ij,ij->i", u, v)
               * np.einsum("ij,ij->i", ru, rv)
               + np.einsum("ij,ij->i", v, v)
               * np.einsum("ij,ij->i", ru, ru))
    stretch = np.sqrt(np.maximum(squared, 0.0)) \
        / (np.sqrt(8.0) * binding.rest_areas)
    out = binding.rest_positions.copy()
    idx = binding.interior
    out[idx] = binding.phi[idx] @ deformed \
        + binding.psi[idx] @ (stretch[:, None] * normals)
    return out


def save_binding(binding):
    """Serialize a binding to bytes.

    Layout: 8-byte magic, mesh triangle hash and cage hash (64 ASCII
    bytes each), three little-endian int64 counts (mesh vertices, cage
    vertices, cage triangles), then raw little-endian arrays in order:
    interior (u1), phi, psi, rest_positions (f8), cage_triangles (i8),
    rest_edges, rest_normals, rest_areas (f8).
    """
    head = _MAGIC
    head += binding.mesh_fingerprint["triangle_hash"].encode("ascii")
    head += binding.cage_hash.encode("ascii")
    head += struct.pack("<qqq", binding.mesh_vertex_count,
                        binding.cage_vertex_count,
                        binding.cage_triangle_count)
    parts = [head]
    for arr, kind in ((binding.interior, "u1"), (binding.phi, "<f8"),
                      (binding.psi, "<f8"), (binding.rest_positions, "<f8"),
                      (binding.cage_triangles, "<i8"),
                      (binding.rest_edges, "<f8"),
                      (binding.rest_normals, "<f8"),
                      (binding.rest_areas, "<f8")):
        parts.append(np.ascontiguousarray(arr, dtype=kind).tobytes())
    return b"".join(parts)


def load_binding(data):
    """Parse bytes produced by save_binding back into a GCBinding."""
    head = len(_MAGIC) + 128 + 24
    if len(data) < head or data[:len(_MAGIC)] != _MAGIC:
        raise GCError("corrupt binding: bad header")
    offset = len(_MAGIC)
    tri_hash = data[offset:offset + 64].decode("ascii", "replace")
    cage_hash = data[offset + 64:offset + 128].decode("ascii", "replace")
    n, mv, mt = struct.unpack_from("<qqq", data, offset + 128)
    if n < 0 or mv < 0 or mt < 0:
        raise GCError("corrupt binding: negative counts")
    sizes = [(n, "u1"), (n * mv, "<f8"), (n * mt, "<f8"), (n * 3, "<f8"),
             (mt * 3, "<i8"), (mt * 6, "<f8"), (mt * 3, "<f8"), (mt, "<f8")]
    need = head + sum(cnt * np.dtype(k).itemsize for cnt, k in sizes)
    if len(data) != need:
        raise GCError(f"corrupt binding: expected {need} bytes, "
                      f"got {len(data)}")
    arrays = []
    pos = head
    for cnt, kind in sizes:
        arr = np.frombuffer(data, dtype=kind, count=cnt, offset=pos).copy()
        pos += cnt * np.dtype(kind).itemsize
        arrays.append(arr)
    interior, phi, psi, rest_pos, tris, edges, normals, areas = arrays
    return GCBinding(phi.reshape(n, mv), psi.reshape(n, mt),
                     interior.astype(bool), rest_pos.reshape(n, 3),
                     tris.reshape(mt, 3), edges.reshape(mt, 2, 3),
                     normals.reshape(mt, 3), areas,
                     {"vertex_count": int(n), "triangle_hash": tri_hash},
                     cage_hash)

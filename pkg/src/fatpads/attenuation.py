"""Per-handle attenuation weights.

For a handle h and a pad vertex v, the weight is a quadratic falloff in
geodesic distance,

    w = (d(v,h) - d(i,h))^2 / d(i,h)^2,

where i is the point where the pad border meets the cutting plane
through h spanned by the direction h->v and the handle normal. Borders
pin the field: non-movable border vertices get exactly 0, movable
border vertices (lip lines, eyelid rims) and the anchor itself exactly
1. Weights are computed offline per handle and persisted as JSON.
"""

import json
import logging

import numpy as np

from .geodesic import solve_from, solve_from_point
from .mesh import fingerprints_match
from .padmap import PadMapError, border_vertices, pad_border_loops

log = logging.getLogger(__name__)

EPS_DIR = 1e-4  # direction filter: keep candidates with cos > 1 - EPS_DIR


class AttenuationError(ValueError):
    pass


class IntersectionResult:
    """Where the cutting plane meets the pad border, and how it was found.

    The point is kept both as an edge parameterization (border polyline
    edge va->vb at parameter t) and as triangle barycentrics on an
    incident mesh triangle, which is what the arbitrary-point geodesic
    source wants.
    """

    __slots__ = ("va", "vb", "t", "position", "triangle", "barycentric",
                 "d_ih", "candidates_considered", "stage")

    def __init__(self, va, vb, t, position, triangle, barycentric, d_ih,
                 candidates_considered, stage):
        self.va = int(va)
        self.vb = int(vb)
        self.t = float(t)
        self.position = np.asarray(position, dtype=np.float64)
        self.triangle = int(triangle)
        self.barycentric = np.asarray(barycentric, dtype=np.float64)
        self.d_ih = float(d_ih)
        self.candidates_considered = int(candidates_considered)
        self.stage = stage


class WeightMatrix:
    """Sparse per-vertex weights of one handle; absent vertices weigh 0."""

    __slots__ = ("handle_id", "vertex_ids", "weights", "_index")

    def __init__(self, handle_id, vertex_ids, weights):
        order = np.argsort(np.asarray(vertex_ids, dtype=np.int64))
        self.handle_id = str(handle_id)
        self.vertex_ids = np.asarray(vertex_ids, dtype=np.int64)[order]
        self.weights = np.asarray(weights, dtype=np.float64)[order]
        if len(self.vertex_ids) != len(set(self.vertex_ids.tolist())):
            raise AttenuationError(
                f"weight matrix {self.handle_id!r} has duplicate vertices")
        if self.weights.size and (self.weights.min() < 0.0
                                  or self.weights.max() > 1.0):
            raise AttenuationError(
                f"weight matrix {self.handle_id!r} has weights outside [0,1]")
        self.vertex_ids.flags.writeable = False
        self.weights.flags.writeable = False
        self._index = {int(v): k for k, v in enumerate(self.vertex_ids)}

    def weight(self, v):
        k = self._index.get(int(v))
        return float(self.weights[k]) if k is not None else 0.0

    def __len__(self):
        return len(self.vertex_ids)


def _plane_candidates(h_pos, plane_normal, loops, positions, scale):
    """Points where the plane cuts the border polyline.

    Returns tuples (loop_idx, edge_idx, t, point). Vertices lying in the
    plane produce one candidate each (t=0 on their outgoing edge);
    proper sign changes produce the interpolated crossing.
    """
    out = []
    on_plane = 1e-12 * scale
    for li, loop in enumerate(loops):
        pts = positions[loop]
        s = (pts - h_pos) @ plane_normal
        nloop = len(loop)
        for k in range(nloop):
            s0, s1 = s[k], s[(k + 1) % nloop]
            if abs(s0) <= on_plane:
                out.append((li, k, 0.0, pts[k]))
            elif s0 * s1 < 0.0 and abs(s1) > on_plane:
                t = s0 / (s0 - s1)
                p = pts[k] + t * (pts[(k + 1) % nloop] - pts[k])
                out.append((li, k, float(t), p))
    return out


def _edge_triangle_and_bary(mesh, va, vb, t):
    """Smallest-index triangle containing edge (va, vb), with barycentrics."""
    tris = np.flatnonzero((mesh.triangles == va).any(axis=1)
                          & (mesh.triangles == vb).any(axis=1))
    if len(tris) == 0:
        raise AttenuationError(f"({va}, {vb}) is not a mesh edge")
    ti = int(tris.min())
    corners = mesh.triangles[ti]
    bary = np.zeros(3)
    bary[np.flatnonzero(corners == va)[0]] = 1.0 - t
    bary[np.flatnonzero(corners == vb)[0]] = t
    return ti, bary


def _select_candidate(mesh, v, survivors, field):
    """Min d(v, i) over the surviving candidates, geodesically.

    One candidate needs no solve at all. With several, candidates are
    visited in chord order: the straight chord never exceeds the
    geodesic, so once a candidate's chord reaches the best geodesic so
    far the rest cannot win and their solves are skipped. A field that
    brings its own solve_from_point (e.g. one restricted to a pad
    collar) answers the point solves instead of the full mesh.
    """
    if len(survivors) == 1:
        return survivors[0]
    vpos = mesh.positions[v]
    point_solver = getattr(field, "solve_from_point", None)

    def chord(c):
        return float(np.linalg.norm(c[3] - vpos))

    best_d, best = np.inf, None
    for cand in sorted(survivors, key=lambda c: (chord(c), c[0], c[1], c[2])):
        if chord(cand) >= best_d:
            break
        li, k, t, pos, va, vb, d_ih = cand
        ti, bary = _edge_triangle_and_bary(mesh, va, vb, t)
        if point_solver is not None:
            d = float(point_solver(ti, bary)[v])
        else:
            fld = solve_from_point(mesh, ti, bary, method=field.method)
            d = float(fld.distances[v])
        if d < best_d:
            best_d, best = d, cand
    return best


def border_intersection(mesh, padmap, handle_id, v, field=None,
                        eps_dir=EPS_DIR, betweenness="geodesic",
                        loops=None):
    """Find the border point i cut by the plane through h, v and the normal.

    Candidates are all plane/border-polyline crossings; they then pass
    the direction filter (chord h->i aligned with chord h->v) and the
    between-ness filter (v closer to h than i is). On curved pads the
    strict alignment threshold is unreachable, so filtering relaxes in
    stages: strict cosine, then forward hemisphere, then a plane
    re-spanned with the pad's average normal. The closest survivor by
    d(v, i) wins.
    """
    handle = padmap.handle(handle_id)
    pad = padmap.pad(handle.pad_id)
    if v not in pad.vertex_set:
        raise AttenuationError(f"vertex {v} is not in pad {pad.pad_id!r}")
    if v == handle.anchor:
        raise AttenuationError("the anchor has no border intersection")
    if loops is None:
        loops = pad_border_loops(mesh, padmap, handle.pad_id)
    if not loops:
        raise AttenuationError(
            f"pad {pad.pad_id!r} has no border; attenuation is undefined")
    if field is None:
        field = solve_from(mesh, handle.anchor)

    pos = mesh.positions
    scale = float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0))) or 1.0
    h_pos = pos[handle.anchor]
    u = pos[v] - h_pos
    nu = np.linalg.norm(u)
    if nu <= 1e-300:
        raise AttenuationError(f"vertex {v} coincides with the handle anchor")
    u = u / nu

    normals = [mesh.vertex_normals[handle.anchor]]
    pad_avg = mesh.vertex_normals[pad.vertices].mean(axis=0)
    if np.linalg.norm(pad_avg) > 1e-300:
        normals.append(pad_avg / np.linalg.norm(pad_avg))

    d_vh = float(field.distances[v]) if betweenness == "geodesic" else nu

    stages = [("strict", 0), ("hemisphere", 0), ("respan", 1)]
    for stage, which in stages:
        if which >= len(normals):
            continue
        plane_normal = np.cross(u, normals[which])
        npn = np.linalg.norm(plane_normal)
        if npn <= 1e-9:
            continue  # v direction parallel to the normal; plane undefined
        plane_normal = plane_normal / npn

        cands = _plane_candidates(h_pos, plane_normal, loops, pos, scale)
        survivors = []
        for li, k, t, p in cands:
            direction = p - h_pos
            nd = np.linalg.norm(direction)
            if nd <= 1e-300:
                continue
            cos = float(direction @ u) / nd
            if stage == "strict":
                if cos <= 1.0 - eps_dir:
                    continue
            elif cos <= 0.0:
                continue
            loop = loops[li]
            va, vb = loop[k], loop[(k + 1) % len(loop)]
            if betweenness == "geodesic":
                d_ih = field.distance_at_edge_point(va, vb, t)
            else:
                d_ih = nd
            if not d_vh < d_ih:
                continue
            survivors.append((li, k, t, p, va, vb, float(d_ih)))
        if survivors:
            li, k, t, p, va, vb, d_ih = _select_candidate(
                mesh, v, survivors, field)
            if betweenness != "geodesic":
                d_ih = field.distance_at_edge_point(va, vb, t)
            ti, bary = _edge_triangle_and_bary(mesh, va, vb, t)
            return IntersectionResult(va, vb, t, p, ti, bary, d_ih,
                                      len(cands), stage)
    raise AttenuationError(
        f"no border intersection for vertex {v} of pad {pad.pad_id!r}")


def compute_weight(mesh, padmap, handle_id, v, field=None, loops=None,
                   eps_dir=EPS_DIR, betweenness="geodesic"):
    """Eq-style quadratic weight for one vertex, overrides included."""
    handle = padmap.handle(handle_id)
    pad = padmap.pad(handle.pad_id)
    if v not in pad.vertex_set:
        return 0.0
    if v == handle.anchor:
        return 1.0
    border = border_vertices(mesh, pad.vertex_set)
    if v in border:
        return 1.0 if v in pad.movable_border else 0.0
    if field is None:
        field = solve_from(mesh, handle.anchor)
    res = border_intersection(mesh, padmap, handle_id, v, field=field,
                              loops=loops, eps_dir=eps_dir,
                              betweenness=betweenness)
    if res.d_ih <= 0.0:
        raise AttenuationError(
            f"handle {handle_id!r} sits on the pad border (d(i,h) = 0)")
    d_vh = float(field.distances[v])
    w = (d_vh - res.d_ih) ** 2 / res.d_ih ** 2
    return float(min(1.0, max(0.0, w)))


def build_weight_matrix(mesh, padmap, handle_id, method="exact",
                        cache_dir=None, eps_dir=EPS_DIR,
                        betweenness="geodesic", max_unresolved=0.01,
                        field=None):
    """Weights for every vertex of the handle's pad.

    Vertices whose border intersection fails even after the filter
    relaxations get weight 0 (rigid is the safe failure mode); if more
    than max_unresolved of the pad ends up in that state the build
    errors out instead of silently freezing the pad. A precomputed
    distance field for the handle's anchor may be injected; otherwise
    one is solved here with the given method.
    """
    handle = padmap.handle(handle_id)
    pad = padmap.pad(handle.pad_id)
    loops = pad_border_loops(mesh, padmap, handle.pad_id)
    if not loops:
        raise AttenuationError(
            f"pad {pad.pad_id!r} has no border; attenuation is undefined")
    if field is None:
        field = solve_from(mesh, handle.anchor, method=method,
                           cache_dir=cache_dir)
    border = border_vertices(mesh, pad.vertex_set)

    ids, weights, unresolved = [], [], []
    for v in pad.vertices.tolist():
        if v == handle.anchor:
            w = 1.0
        elif v in border:
            w = 1.0 if v in pad.movable_border else 0.0
        else:
            try:
                w = compute_weight(mesh, padmap, handle_id, v, field=field,
                                   loops=loops, eps_dir=eps_dir,
                                   betweenness=betweenness)
            except AttenuationError:
                unresolved.append(v)
                w = 0.0
        ids.append(v)
        weights.append(w)
    if unresolved:
        frac = len(unresolved) / len(pad.vertices)
        log.warning("handle %s: %d/%d pad vertices had no border "
                    "intersection; weight 0 assigned", handle_id,
                    len(unresolved), len(pad.vertices))
        if frac > max_unresolved:
            raise AttenuationError(
                f"handle {handle_id!r}: {len(unresolved)} of "
                f"{len(pad.vertices)} pad vertices unresolvable "
                f"(limit {max_unresolved:.0%}); first few: {unresolved[:8]}")
    return WeightMatrix(handle_id, ids, weights)


def build_all_weights(mesh, padmap, method="exact", cache_dir=None,
                      eps_dir=EPS_DIR, betweenness="geodesic",
                      max_unresolved=0.01):
    """Weight matrices for every handle, ordered by handle id."""
    out = []
    for h in sorted(padmap.handles, key=lambda h: h.handle_id):
        out.append(build_weight_matrix(
            mesh, padmap, h.handle_id, method=method, cache_dir=cache_dir,
            eps_dir=eps_dir, betweenness=betweenness,
            max_unresolved=max_unresolved))
    return out


def save_weights(matrices, mesh, padmap):
    """Serialize matrices with provenance (mesh fingerprint, map hash)."""
    doc = {
        "mesh_fingerprint": mesh.fingerprint(),
        "map_hash": padmap.content_hash(),
        "matrices": [
            {"handle": m.handle_id,
             "entries": [[int(v), float(w)]
                         for v, w in zip(m.vertex_ids, m.weights)]}
            for m in sorted(matrices, key=lambda m: m.handle_id)
        ],
    }
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()


def load_weights(data, mesh=None, padmap=None):
    """Load matrices; verifying provenance against a mesh/map is opt-in."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise AttenuationError(f"weights file is not valid JSON: {exc}") from None
    try:
        fp = doc["mesh_fingerprint"]
        matrices = doc["matrices"]
        map_hash = doc["map_hash"]
    except (KeyError, TypeError):
        raise AttenuationError("weights file is missing required fields") from None
    if mesh is not None and not fingerprints_match(fp, mesh.fingerprint()):
        raise AttenuationError(
            "stale weights: mesh connectivity changed since they were built")
    if padmap is not None and map_hash != padmap.content_hash():
        raise AttenuationError(
            "stale weights: pad map changed since they were built")
    out = []
    for m in matrices:
        entries = m["entries"]
        ids = [int(e[0]) for e in entries]
        ws = [float(e[1]) for e in entries]
        out.append(WeightMatrix(m["handle"], ids, ws))
    return out

"""Deformation cages built over fat-pad handle anchors.

A cage for one face region starts as the convex hull of the region's
handle anchor points. The hull is opened at the back (triangles facing
away from the viewer are dropped), offset off the face along the anchor
normals until it clears the region, its silhouette rim duplicated into a
fixed outer ring, and finally closed by two fixed vertices placed behind
the head. Handles stay bound one-to-one to their hull vertices; every
vertex added after the hull stage is fixed, which pins the cage where it
must not follow a handle.
"""

import hashlib
import json
import logging

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .intersect import intersecting_pairs

log = logging.getLogger(__name__)

REGIONS = ("upper", "lower")


class CageError(ValueError):
    """Invalid cage construction input or violated cage invariant."""


class CageParams:
    """Knobs for cage construction.

    alpha_base scales the offset distance relative to the mesh bbox
    diagonal (the lower region doubles it), escalation grows the offset
    when the cage still intersects the face, axis_masks restricts chosen
    handles (nose handles in practice) to offsetting along the masked
    axes only, and offset_mode picks per-vertex normal offset or uniform
    scaling about the anchor centroid.
    """

    __slots__ = ("alpha_base", "escalation", "max_iterations", "back_margin",
                 "back_split", "offset_mode", "axis_masks")

    def __init__(self, alpha_base=0.05, escalation=1.5, max_iterations=10,
                 back_margin=0.25, back_split=0.35, offset_mode="normal",
                 axis_masks=None):
        if not alpha_base > 0.0:
            raise CageError("alpha_base must be positive; a cage on the "
                            "surface always intersects it")
        if not escalation > 1.0:
            raise CageError("escalation factor must exceed 1")
        if int(max_iterations) < 1:
            raise CageError("max_iterations must be at least 1")
        if offset_mode not in ("normal", "centroid"):
            raise CageError(f"unknown offset_mode {offset_mode!r}")
        if not back_margin > 0.0 or not back_split > 0.0:
            raise CageError("back_margin and back_split must be positive")
        self.alpha_base = float(alpha_base)
        self.escalation = float(escalation)
        self.max_iterations = int(max_iterations)
        self.back_margin = float(back_margin)
        self.back_split = float(back_split)
        self.offset_mode = offset_mode
        masks = {}
        for hid, mask in (axis_masks or {}).items():
            arr = np.asarray(mask, dtype=np.float64)
            if arr.shape != (3,) or not np.all(np.isfinite(arr)) \
                    or not np.any(arr):
                raise CageError(f"axis mask for {hid!r} must have 3 finite "
                                "components and not be all zero")
            arr.setflags(write=False)
            masks[str(hid)] = arr
        self.axis_masks = masks


class Cage:
    """Triangulated cage with handle bindings and a fixed vertex set.

    anchor_vertices, bound_triangles and offsets are construction-time
    metadata (mesh anchor per cage vertex, face-region triangle indices,
    applied offset vectors); they are not part of the serialized cage.
    """

    __slots__ = ("region", "vertices", "triangles", "handle_binding",
                 "fixed", "anchor_vertices", "bound_triangles", "offsets")

    def __init__(self, region, vertices, triangles, handle_binding, fixed=(),
                 anchor_vertices=None, bound_triangles=None, offsets=None):
        if region not in REGIONS:
            raise CageError(f"unknown region {region!r}")
        self.region = region
        verts = np.array(vertices, dtype=np.float64)
        if verts.ndim != 2 or verts.shape[1] != 3 or not np.all(np.isfinite(verts)):
            raise CageError("cage vertices must be finite 3D points")
        tris = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        n = len(verts)
        if len(tris) and (tris.min() < 0 or tris.max() >= n):
            raise CageError("cage triangle index out of range")
        if np.any(tris[:, 0] == tris[:, 1]) or np.any(tris[:, 1] == tris[:, 2]) \
                or np.any(tris[:, 0] == tris[:, 2]):
            raise CageError("cage triangle repeats a vertex")
        verts.setflags(write=False)
        tris.setflags(write=False)
        self.vertices = verts
        self.triangles = tris
        binding = {}
        for hid, vid in dict(handle_binding).items():
            vid = int(vid)
            if not 0 <= vid < n:
                raise CageError(f"handle {hid!r} bound to missing cage vertex {vid}")
            binding[str(hid)] = vid
        if len(set(binding.values())) != len(binding):
            raise CageError("two handles bound to the same cage vertex")
        self.handle_binding = binding
        fixed_set = frozenset(int(v) for v in fixed)
        if fixed_set and (min(fixed_set) < 0 or max(fixed_set) >= n):
            raise CageError("fixed vertex index out of range")
        movable_bound = fixed_set.intersection(binding.values())
        if movable_bound:
            raise CageError(f"handle-bound cage vertices cannot be fixed: "
                            f"{sorted(movable_bound)}")
        self.fixed = fixed_set
        if anchor_vertices is not None:
            anchor_vertices = np.asarray(anchor_vertices, dtype=np.int64)
            if anchor_vertices.shape != (n,):
                raise CageError("anchor_vertices must have one entry per cage vertex")
        self.anchor_vertices = anchor_vertices
        if bound_triangles is not None:
            bound_triangles = np.asarray(bound_triangles, dtype=np.int64).ravel()
        self.bound_triangles = bound_triangles
        if offsets is not None:
            offsets = np.asarray(offsets, dtype=np.float64)
            if offsets.shape != (n, 3):
                raise CageError("offsets must have one 3D vector per cage vertex")
        self.offsets = offsets

    @property
    def vertex_count(self):
        return len(self.vertices)

    @property
    def triangle_count(self):
        return len(self.triangles)

    def with_vertices(self, positions):
        """Same cage topology and bindings over new vertex positions."""
        return Cage(self.region, positions, self.triangles,
                    self.handle_binding, self.fixed,
                    anchor_vertices=self.anchor_vertices,
                    bound_triangles=self.bound_triangles)

    def to_dict(self):
        return {
            "region": self.region,
            "vertices": [[float(x) for x in row] for row in self.vertices],
            "triangles": [[int(x) for x in row] for row in self.triangles],
            "handle_binding": {h: int(v) for h, v in
                               sorted(self.handle_binding.items())},
            "fixed": sorted(self.fixed),
        }

    def content_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _rotate_min_first(tri):
    a, b, c = tri
    if b <= a and b <= c:
        return (b, c, a)
    if c <= a and c <= b:
        return (c, a, b)
    return (a, b, c)


def hull_faces(points):
    """Convex hull triangles of a point set, outward, canonically ordered.

    Faces are rotated so the smallest index leads (preserving winding)
    and sorted lexicographically, so identical point sets always yield
    identical arrays.
    """
    pts = np.asarray(points, dtype=np.float64)
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise CageError(f"convex hull failed: {exc}") from exc
    faces = []
    for simplex, eq in zip(hull.simplices, hull.equations):
        a, b, c = (int(x) for x in simplex)
        normal = np.cross(pts[b] - pts[a], pts[c] - pts[a])
        if float(normal @ eq[:3]) < 0.0:
            b, c = c, b
        faces.append(_rotate_min_first((a, b, c)))
    faces.sort()
    return np.array(faces, dtype=np.int64)


def anchor_hull(mesh, padmap, region):
    """Closed convex-hull cage over every handle anchor tagged region.

    Each hull vertex is one anchor and stays bound to its handle; an
    anchor strictly inside the hull gets no cage vertex and its handle
    is left unbound (with a warning), since only hull vertices exist.
    """
    pads = [p for p in padmap.pads if p.region == region]
    if not pads:
        raise CageError(f"map has no pads tagged {region!r}")
    handles = sorted((h for p in pads for h in p.handles),
                     key=lambda h: h.handle_id)
    if len(handles) < 4:
        raise CageError(f"{region} region has {len(handles)} handles; "
                        "a cage hull needs at least 4")
    points = mesh.positions[[h.anchor for h in handles]]
    if len(np.unique(points, axis=0)) < len(points):
        raise CageError("handles share an anchor position; "
                        "cage vertices must be distinct")
    centered = points - points.mean(axis=0)
    scale = float(np.abs(centered).max())
    if np.linalg.matrix_rank(centered, tol=1e-9 * scale) < 3:
        raise CageError(f"{region} handle anchors are coplanar; "
                        "the cage hull is degenerate")

    faces = hull_faces(points)
    on_hull = sorted(set(int(x) for x in faces.flat))
    index = {pi: ci for ci, pi in enumerate(on_hull)}
    unbound = [handles[pi].handle_id for pi in range(len(handles))
               if pi not in index]
    if unbound:
        log.warning("anchors interior to the %s hull leave handles unbound: %s",
                    region, ", ".join(unbound))
    binding = {handles[pi].handle_id: ci for pi, ci in index.items()}
    anchor_vertices = np.empty(len(on_hull), dtype=np.int64)
    for pi, ci in index.items():
        anchor_vertices[ci] = handles[pi].anchor

    # region = every mesh triangle touching the pads; a triangle with
    # even one pad corner deforms, so the cage must stay clear of it too
    in_region = np.zeros(mesh.vertex_count, dtype=bool)
    for pad in pads:
        in_region[pad.vertices] = True
    bound_triangles = np.nonzero(in_region[mesh.triangles].any(axis=1))[0]

    remapped = np.array([[index[int(v)] for v in f] for f in faces],
                        dtype=np.int64)
    return Cage(region, points[on_hull], remapped, binding,
                anchor_vertices=anchor_vertices,
                bound_triangles=bound_triangles)


def open_back(cage):
    """Drop cage triangles facing away from the viewer (normal z <= 0).

    The hull of face anchors has a front sheet over the face and a back
    sheet cutting through the head; only the front sheet is kept. Its
    silhouette rim becomes the open boundary that later stages duplicate
    and close behind the head.
    """
    v, t = cage.vertices, cage.triangles
    normals = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    kept = t[normals[:, 2] > 0.0]
    if not len(kept):
        raise CageError("no front-facing cage triangles; expected the mesh "
                        "aligned with +z toward the viewer")
    used = np.unique(kept)
    remap = {int(old): new for new, old in enumerate(used)}
    binding = {}
    for hid, vid in cage.handle_binding.items():
        if vid in remap:
            binding[hid] = remap[vid]
        else:
            log.warning("handle %s sits on the dropped back sheet; unbound", hid)
    tris = np.array([[remap[int(x)] for x in row] for row in kept],
                    dtype=np.int64)
    anchors = None if cage.anchor_vertices is None else cage.anchor_vertices[used]
    offsets = None if cage.offsets is None else cage.offsets[used]
    return Cage(cage.region, v[used], tris, binding, cage.fixed,
                anchor_vertices=anchors,
                bound_triangles=cage.bound_triangles, offsets=offsets)


def _region_triangles(cage, mesh):
    if cage.bound_triangles is None:
        return mesh.triangles
    return mesh.triangles[cage.bound_triangles]


def scale_cage(cage, mesh, params=None):
    """Offset cage vertices off the face until the cage clears it.

    Bound vertices move along their anchor's mesh normal by
    alpha*bboxDiag (alpha doubled for the lower region), or away from
    the anchor centroid in centroid mode; axis masks zero out forbidden
    components. The offset grows by the escalation factor until no cage
    triangle intersects the bound face region.
    """
    params = params or CageParams()
    diag = mesh.bbox_diagonal()
    alpha = params.alpha_base * (2.0 if cage.region == "lower" else 1.0)

    if params.offset_mode == "centroid":
        bound = sorted(cage.handle_binding.values())
        pivot = cage.vertices[bound if bound else slice(None)].mean(axis=0)
        base = (cage.vertices - pivot) * alpha
    else:
        if cage.anchor_vertices is None:
            raise CageError("cage has no anchor records; build it via "
                            "anchor_hull before scaling")
        normals = mesh.vertex_normals
        base = np.zeros_like(cage.vertices)
        for vid in cage.handle_binding.values():
            base[vid] = alpha * diag * normals[cage.anchor_vertices[vid]]
    for hid, mask in params.axis_masks.items():
        vid = cage.handle_binding.get(hid)
        if vid is not None:
            base[vid] = base[vid] * mask

    region_tris = _region_triangles(cage, mesh)
    factor = 1.0
    for _ in range(params.max_iterations):
        offsets = base * factor
        moved = cage.vertices + offsets
        hits = intersecting_pairs(moved, cage.triangles,
                                  mesh.positions, region_tris, limit=1)
        if not hits:
            return Cage(cage.region, moved, cage.triangles,
                        cage.handle_binding, cage.fixed,
                        anchor_vertices=cage.anchor_vertices,
                        bound_triangles=cage.bound_triangles,
                        offsets=offsets)
        factor *= params.escalation
    raise CageError(f"{cage.region} cage still intersects the face region "
                    f"after {params.max_iterations} offset escalations "
                    f"(final factor {factor:g})")


def _boundary_loops(triangles):
    """Open boundary cycles of a triangle set, in directed-edge order.

    Boundary edges are directed edges whose reverse never occurs; they
    must chain into simple cycles. Traversal starts each cycle at its
    smallest vertex id, so the result is deterministic.
    """
    directed = set()
    for a, b, c in ((int(t[0]), int(t[1]), int(t[2])) for t in triangles):
        directed.update(((a, b), (b, c), (c, a)))
    succ = {}
    for a, b in directed:
        if (b, a) in directed:
            continue
        if a in succ:
            raise CageError(f"cage rim is not a simple cycle: vertex {a} "
                            "has two outgoing boundary edges")
        succ[a] = b
    loops = []
    seen = set()
    for start in sorted(succ):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = succ[start]
        while cur != start:
            if cur in seen or cur not in succ:
                raise CageError("cage rim is not a simple cycle: boundary "
                                f"edges do not close at vertex {cur}")
            loop.append(cur)
            seen.add(cur)
            cur = succ[cur]
        loops.append(loop)
    return loops


def duplicate_and_fix_borders(cage, params=None):
    """Duplicate the open rim outward and fix the duplicates.

    Each rim vertex gets a copy pushed further out by its own recorded
    offset; a triangle strip joins the original ring to the copies, so
    the open boundary moves to the fixed outer ring. Fixing the copies
    instead of the rim itself keeps the rim deformable while the cage
    stays pinned at its outer edge.
    """
    del params  # uniform signature with the other construction stages
    if cage.offsets is None:
        raise CageError("cage has no recorded offsets; scale it before "
                        "duplicating the rim")
    loops = _boundary_loops(cage.triangles)
    if not loops:
        raise CageError("cage has no open rim to duplicate")
    if len(loops) > 1:
        raise CageError(f"cage rim is not a simple cycle; found {len(loops)} "
                        "boundary loops")
    rim = loops[0]
    scale = float(np.abs(cage.vertices).max()) or 1.0
    rim_offsets = cage.offsets[rim]
    flat = np.linalg.norm(rim_offsets, axis=1) <= 1e-12 * scale
    if np.any(flat):
        bad = [rim[i] for i in np.nonzero(flat)[0]]
        raise CageError(f"rim vertices {bad} have zero offsets; their "
                        "duplicates would coincide with the originals")

    n0 = cage.vertex_count
    m = len(rim)
    strip = []
    for i in range(m):
        a, b = rim[i], rim[(i + 1) % m]
        da, db = n0 + i, n0 + (i + 1) % m
        strip.append((b, a, da))
        strip.append((b, da, db))
    verts = np.vstack([cage.vertices, cage.vertices[rim] + rim_offsets])
    tris = np.vstack([cage.triangles, np.array(strip, dtype=np.int64)])
    anchors = None
    if cage.anchor_vertices is not None:
        anchors = np.concatenate([cage.anchor_vertices,
                                  np.full(m, -1, dtype=np.int64)])
    offsets = np.vstack([cage.offsets, rim_offsets])
    return Cage(cage.region, verts, tris, cage.handle_binding,
                cage.fixed | set(range(n0, n0 + m)),
                anchor_vertices=anchors,
                bound_triangles=cage.bound_triangles, offsets=offsets)


def close_cage(cage, mesh, params=None):
    """Close the remaining boundary loop behind the head.

    Two fixed vertices go behind the mesh bbox, split along y so the cap
    triangles stay well shaped: the loop is cut at its two x extremes
    and the upper arc fans to the +y vertex, the lower arc to the -y
    one, with two seam triangles joining the fans. The wide split makes
    the fans dive past the head well above or below the bound region,
    so whatever surface they cross on the way back is never region
    surface.
    """
    params = params or CageParams()
    loops = _boundary_loops(cage.triangles)
    if not loops:
        raise CageError("cage is already closed")
    if len(loops) > 1:
        raise CageError(f"cage has {len(loops)} open loops; expected exactly "
                        "the duplicate ring")
    loop = loops[0]
    m = len(loop)

    lo, hi = mesh.bbox()
    center = (lo + hi) / 2.0
    diag = mesh.bbox_diagonal()
    z_back = lo[2] - params.back_margin * diag
    apex_p = np.array([center[0], center[1] + params.back_split * diag, z_back])
    apex_q = np.array([center[0], center[1] - params.back_split * diag, z_back])

    xs = cage.vertices[loop][:, 0]
    j0 = int(np.argmax(xs))
    j1 = int(np.argmin(xs))
    if j0 == j1:
        j1 = (j0 + m // 2) % m
    vp, vq = cage.vertex_count, cage.vertex_count + 1

    # The walk direction around the loop depends on the sheet's
    # orientation, so decide which arc is the upper one by its mean
    # height rather than by walk order; fanning the low arc to the +y
    # apex would sweep the cap across the face.
    arc_a, arc_b = [], []
    i = j0
    while i != j1:
        arc_a.append(i)
        i = (i + 1) % m
    while i != j0:
        arc_b.append(i)
        i = (i + 1) % m
    ya = cage.vertices[[loop[i] for i in arc_a], 1].mean()
    yb = cage.vertices[[loop[i] for i in arc_b], 1].mean()
    apex_a, apex_b = (vp, vq) if ya >= yb else (vq, vp)

    cap = []
    for i in arc_a:
        cap.append((loop[(i + 1) % m], loop[i], apex_a))
    for i in arc_b:
        cap.append((loop[(i + 1) % m], loop[i], apex_b))
    cap.append((apex_a, loop[j0], apex_b))
    cap.append((apex_b, loop[j1], apex_a))

    verts = np.vstack([cage.vertices, apex_p, apex_q])
    tris = np.vstack([cage.triangles, np.array(cap, dtype=np.int64)])
    anchors = None
    if cage.anchor_vertices is not None:
        anchors = np.concatenate([cage.anchor_vertices,
                                  np.full(2, -1, dtype=np.int64)])
    offsets = None
    if cage.offsets is not None:
        offsets = np.vstack([cage.offsets, np.zeros((2, 3))])
    return Cage(cage.region, verts, tris, cage.handle_binding,
                cage.fixed | {vp, vq}, anchor_vertices=anchors,
                bound_triangles=cage.bound_triangles, offsets=offsets)


def check_cage(cage):
    """Raise CageError unless the cage is a closed, outward, genus-0 manifold."""
    problems = []
    tris = cage.triangles
    if len(tris) < 4:
        problems.append("fewer than 4 triangles")
    directed = {}
    for a, b, c in ((int(t[0]), int(t[1]), int(t[2])) for t in tris):
        for e in ((a, b), (b, c), (c, a)):
            directed[e] = directed.get(e, 0) + 1
    for (a, b), count in directed.items():
        if count > 1:
            problems.append(f"directed edge {(a, b)} used {count} times")
        elif (b, a) not in directed:
            problems.append(f"edge {(a, b)} has no mate; cage is open")
    if not problems:
        nv = cage.vertex_count
        euler = nv - len(directed) // 2 + len(tris)
        if euler != 2:
            problems.append(f"Euler characteristic {euler}, expected 2")
        adjacency = {}
        for a, b in directed:
            adjacency.setdefault(a, []).append(b)
        stack, seen = [min(adjacency)], set()
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            stack.extend(adjacency[v])
        if len(seen) != nv:
            problems.append("cage is not connected")
        v = cage.vertices
        volume = float(np.einsum("ij,ij->", v[tris[:, 0]],
                                 np.cross(v[tris[:, 1]], v[tris[:, 2]]))) / 6.0
        if not volume > 0.0:
            problems.append(f"signed volume {volume:g} is not positive; "
                            "orientation is inward or degenerate")
    if problems:
        raise CageError("invalid cage: " + "; ".join(problems))


def build_cage(mesh, padmap, region, params=None):
    """Build the finished cage for one region: hull, open, offset, close.

    Offsetting the open sheet until it clears the face region is not
    enough: the closing fan that sweeps from the duplicated rim to the
    two back vertices can still clip the pads' fringe just outside the
    rim.  When it does, the whole assembly is retried at an escalated
    base offset and a wider back split; pushing the closing vertices
    further above and below the head steepens the fans so they cross
    the surface well away from the region, not at its fringe.

    The result is a closed outward-oriented manifold whose triangles
    stay clear of every mesh triangle of the region's pads, with all
    handles bound and all added vertices fixed.
    """
    params = params or CageParams()
    hull = open_back(anchor_hull(mesh, padmap, region))
    sheet_count = hull.vertex_count
    alpha = params.alpha_base
    split = params.back_split
    hits = []
    for attempt in range(params.max_iterations):
        grown = CageParams(alpha, params.escalation, params.max_iterations,
                           params.back_margin, split,
                           params.offset_mode, params.axis_masks)
        cage = scale_cage(hull, mesh, grown)
        cage = duplicate_and_fix_borders(cage)
        cage = close_cage(cage, mesh, grown)
        if cage.fixed != set(range(sheet_count, cage.vertex_count)):
            raise CageError("internal error: fixed set is not exactly the "
                            "duplicates plus closing vertices")
        check_cage(cage)
        hits = intersecting_pairs(cage.vertices, cage.triangles,
                                  mesh.positions,
                                  _region_triangles(cage, mesh), limit=8)
        if not hits:
            return cage
        log.info("%s cage clips the face region at base offset %.4g, "
                 "split %.3g (attempt %d); retrying larger", region, alpha,
                 split, attempt + 1)
        alpha *= params.escalation
        split *= params.escalation
    raise CageError(f"{region} cage intersects the face region after "
                    f"{params.max_iterations} assembly attempts; sample "
                    f"cage/mesh triangle pairs: {hits}")


def build_both_cages(mesh, padmap, params=None):
    """Independent upper and lower cages; bindings partition by region."""
    upper = build_cage(mesh, padmap, "upper", params)
    lower = build_cage(mesh, padmap, "lower", params)
    return upper, lower


def save_cage(cage):
    """Serialize a finished cage to canonical JSON bytes."""
    check_cage(cage)
    return (json.dumps(cage.to_dict(), indent=2, sort_keys=True) + "\n").encode()


def load_cage(data):
    """Parse and validate a cage document produced by save_cage."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
        cage = Cage(doc["region"], doc["vertices"], doc["triangles"],
                    doc["handle_binding"], doc.get("fixed", ()))
    except CageError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CageError(f"corrupt cage file: {exc}") from exc
    check_cage(cage)
    return cage

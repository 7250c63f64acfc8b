"""Fat pad map: overlapping vertex regions with handles and movable borders.

A map is authored once for a template head and reused on any mesh with
identical triangle connectivity. Pads are vertex sets (possibly
overlapping), each tagged upper or lower, carrying one or more handle
anchors and an optional movable-border subset. The JSON layout is part
of the tool's public contract:

    {
      "fingerprint": {"vertex_count": int, "triangle_hash": hex},
      "pads": [
        {
          "id": str,
          "region": "upper" | "lower",
          "vertices": [int, ...],
          "movable_border": [int, ...],
          "handles": [{"id": str, "anchor": int}, ...]
        },
        ...
      ]
    }
"""

import hashlib
import json

import numpy as np

from .mesh import MeshError, fingerprints_match


class PadMapError(ValueError):
    pass


class Handle:
    """A labeled anchor vertex inside a pad, with its bind-time position."""

    __slots__ = ("handle_id", "pad_id", "anchor", "rest_position")

    def __init__(self, handle_id, pad_id, anchor, rest_position):
        self.handle_id = str(handle_id)
        self.pad_id = str(pad_id)
        self.anchor = int(anchor)
        rp = np.asarray(rest_position, dtype=np.float64).reshape(3)
        rp.flags.writeable = False
        self.rest_position = rp


class FatPad:
    """One overlapping region: vertex set, region tag, handles, movable border."""

    __slots__ = ("pad_id", "region", "vertices", "movable_border", "handles",
                 "vertex_set")

    def __init__(self, pad_id, region, vertices, movable_border, handles):
        self.pad_id = str(pad_id)
        self.region = str(region)
        self.vertices = np.asarray(sorted(set(map(int, vertices))), dtype=np.int64)
        self.vertices.flags.writeable = False
        self.movable_border = frozenset(map(int, movable_border))
        self.handles = list(handles)
        self.vertex_set = frozenset(self.vertices.tolist())


class FatPadMap:
    """Validated pad collection bound to one mesh connectivity."""

    def __init__(self, pads, fingerprint):
        self.pads = list(pads)
        self.fingerprint = dict(fingerprint)
        self._by_pad = {p.pad_id: p for p in self.pads}
        self._by_handle = {h.handle_id: h for p in self.pads for h in p.handles}

    def pad(self, pad_id):
        try:
            return self._by_pad[pad_id]
        except KeyError:
            raise PadMapError(f"unknown pad {pad_id!r}") from None

    def handle(self, handle_id):
        try:
            return self._by_handle[handle_id]
        except KeyError:
            raise PadMapError(f"unknown handle {handle_id!r}") from None

    @property
    def handles(self):
        return [h for p in self.pads for h in p.handles]

    def to_dict(self):
        return {
            "fingerprint": dict(self.fingerprint),
            "pads": [
                {
                    "id": p.pad_id,
                    "region": p.region,
                    "vertices": [int(v) for v in p.vertices],
                    "movable_border": sorted(p.movable_border),
                    "handles": [{"id": h.handle_id, "anchor": h.anchor}
                                for h in p.handles],
                }
                for p in self.pads
            ],
        }

    def content_hash(self):
        """Stable hash of the canonical serialization, for cache keying."""
        blob = json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def border_vertices(mesh, vertex_set):
    """Pad vertices with at least one neighbor outside the pad."""
    out = []
    for v in vertex_set:
        if any(int(u) not in vertex_set for u in mesh.vertex_neighbors(int(v))):
            out.append(int(v))
    return frozenset(out)


def _require(cond, message):
    if not cond:
        raise PadMapError(message)


def load_map(data, mesh):
    """Parse and validate a pad map against a mesh.

    Border subsets are recomputed from mesh adjacency, movable borders
    are checked to lie on the computed border, and every handle anchor
    must sit strictly inside its pad so the attenuation denominator
    d(i, h) never vanishes.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    if isinstance(data, str):
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise PadMapError(f"pad map is not valid JSON: {exc}") from None
    else:
        doc = data
    _require(isinstance(doc, dict), "pad map root must be an object")
    _require("fingerprint" in doc, "pad map missing 'fingerprint'")
    _require("pads" in doc and isinstance(doc["pads"], list),
             "pad map missing 'pads' list")

    fp = doc["fingerprint"]
    try:
        if not fingerprints_match(fp, mesh.fingerprint()):
            raise PadMapError(
                "pad map fingerprint does not match the mesh "
                f"(map: {fp.get('vertex_count')} vertices, "
                f"mesh: {mesh.vertex_count})")
    except (KeyError, TypeError, AttributeError):
        raise PadMapError("pad map fingerprint is malformed") from None

    n = mesh.vertex_count
    pads = []
    seen_pads = set()
    seen_handles = set()
    for k, entry in enumerate(doc["pads"]):
        _require(isinstance(entry, dict), f"pad #{k} must be an object")
        for field in ("id", "region", "vertices", "handles"):
            _require(field in entry, f"pad #{k} missing {field!r}")
        pid = str(entry["id"])
        _require(pid not in seen_pads, f"duplicate pad id {pid!r}")
        seen_pads.add(pid)
        _require(entry["region"] in ("upper", "lower"),
                 f"pad {pid!r}: region must be 'upper' or 'lower', "
                 f"got {entry['region']!r}")
        verts = entry["vertices"]
        _require(len(verts) > 0, f"pad {pid!r}: empty vertex list")
        for v in verts:
            _require(isinstance(v, int) and 0 <= v < n,
                     f"pad {pid!r}: vertex {v} out of range (mesh has {n})")
        vset = set(map(int, verts))

        border = border_vertices(mesh, vset)
        movable = entry.get("movable_border", [])
        for v in movable:
            _require(isinstance(v, int) and 0 <= v < n,
                     f"pad {pid!r}: movable border vertex {v} out of range")
            _require(int(v) in vset,
                     f"pad {pid!r}: movable border vertex {v} not in the pad")
            _require(int(v) in border,
                     f"pad {pid!r}: movable border vertex {v} is interior, "
                     "not on the computed pad border")

        _require(isinstance(entry["handles"], list) and entry["handles"],
                 f"pad {pid!r}: needs at least one handle")
        handles = []
        for hk, hentry in enumerate(entry["handles"]):
            _require(isinstance(hentry, dict) and "id" in hentry
                     and "anchor" in hentry,
                     f"pad {pid!r}: handle #{hk} needs 'id' and 'anchor'")
            hid = str(hentry["id"])
            _require(hid not in seen_handles, f"duplicate handle id {hid!r}")
            seen_handles.add(hid)
            anchor = hentry["anchor"]
            _require(isinstance(anchor, int) and 0 <= anchor < n,
                     f"handle {hid!r}: anchor {anchor} out of range")
            _require(anchor in vset,
                     f"handle {hid!r}: anchor {anchor} not in pad {pid!r}")
            _require(anchor not in border,
                     f"handle {hid!r}: anchor {anchor} lies on the border of "
                     f"pad {pid!r}; anchors must be strictly interior")
            handles.append(Handle(hid, pid, anchor, mesh.positions[anchor]))

        pads.append(FatPad(pid, entry["region"], vset, movable, handles))
    return FatPadMap(pads, mesh.fingerprint())


def save_map(padmap):
    """Serialize a map to canonical JSON bytes (stable across runs)."""
    return (json.dumps(padmap.to_dict(), indent=2, sort_keys=True) + "\n").encode()


def transfer_map(padmap, target):
    """Rebind a map to another mesh with identical triangle connectivity.

    Index sets carry over untouched; only handle rest positions are
    re-read from the target. Cross-topology transfer is refused.
    """
    if not fingerprints_match(padmap.fingerprint, target.fingerprint()):
        raise PadMapError(
            "cannot transfer pad map: target mesh connectivity differs "
            f"(map: {padmap.fingerprint['vertex_count']} vertices, "
            f"target: {target.vertex_count})")
    pads = []
    for p in padmap.pads:
        handles = [Handle(h.handle_id, h.pad_id, h.anchor,
                          target.positions[h.anchor]) for h in p.handles]
        pads.append(FatPad(p.pad_id, p.region, p.vertices, p.movable_border,
                           handles))
    return FatPadMap(pads, padmap.fingerprint)


def pad_border_loops(mesh, padmap, pad_id):
    """Ordered closed border loops of one pad.

    Loop edges are boundary edges of the pad's induced triangle set (a
    triangle is induced when all three corners are pad vertices) whose
    endpoints both lie on the adjacency-computed border. Each border
    vertex must appear in exactly one loop; anything else (bowtie
    vertices, dangling border vertices, pads bleeding over an open mesh
    boundary) is a shape error naming the offending vertices.
    """
    pad = padmap.pad(pad_id)
    vset = pad.vertex_set
    border = border_vertices(mesh, vset)
    tri = mesh.triangles
    inside = np.isin(tri, pad.vertices)
    induced = tri[inside.all(axis=1)]

    edge_count = {}
    for a, b, c in induced:
        for u, v in ((a, b), (b, c), (c, a)):
            key = (int(u), int(v)) if u < v else (int(v), int(u))
            edge_count[key] = edge_count.get(key, 0) + 1
    neighbors = {}
    for (u, v), cnt in edge_count.items():
        if cnt == 1 and u in border and v in border:
            neighbors.setdefault(u, []).append(v)
            neighbors.setdefault(v, []).append(u)

    bad = sorted(v for v, ns in neighbors.items() if len(ns) != 2)
    uncovered = sorted(v for v in border if v not in neighbors)
    if bad or uncovered:
        raise PadMapError(
            f"pad {pad_id!r} has non-manifold border connectivity; "
            f"offending vertices: {bad + uncovered}")

    loops = []
    visited = set()
    for start in sorted(neighbors):
        if start in visited:
            continue
        loop = [start]
        visited.add(start)
        prev, cur = start, min(neighbors[start])
        while cur != start:
            loop.append(cur)
            visited.add(cur)
            a, b = neighbors[cur]
            prev, cur = cur, (b if a == prev else a)
        loops.append(loop)
    return loops

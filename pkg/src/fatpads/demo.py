"""Procedural demo face and its fat-pad map.

An open face mask cropped from a sculpted icosphere, the shape a desk
scanner produces: y up, looking toward +z, no back of the head. Seven
pads drive it: the forehead and two brows on the upper cage; lips, two
cheeks and the chin on the lower one. Everything is a pure function of
the subdivision level, so demo assets rebuild to identical bytes.
"""

import numpy as np

from . import shapes
from .mesh import TriMesh
from .padmap import border_vertices

# pad direction, cap half-angle cosine, region, and handle directions
# (unit-ish vectors; each handle anchors at the pad vertex farthest
# along its direction)
_PADS = [
    ("forehead", "upper", (0.0, 0.58, 0.76), 0.976,
     [(-0.32, 0.56, 0.74), (-0.14, 0.52, 0.82), (0.0, 0.66, 0.72),
      (0.14, 0.52, 0.82), (0.32, 0.56, 0.74)]),
    ("brow.l", "upper", (-0.30, 0.42, 0.86), 0.974,
     [(-0.13, 0.46, 0.88), (-0.30, 0.40, 0.88), (-0.47, 0.34, 0.81)]),
    ("brow.r", "upper", (0.30, 0.42, 0.86), 0.974,
     [(0.13, 0.46, 0.88), (0.30, 0.40, 0.88), (0.47, 0.34, 0.81)]),
    ("lips", "lower", (0.0, -0.34, 0.94), 0.962,
     [(-0.26, -0.33, 0.91), (0.26, -0.33, 0.91),
      (0.0, -0.22, 0.97), (0.0, -0.46, 0.88)]),
    ("cheek.l", "lower", (-0.46, -0.26, 0.85), 0.978,
     [(-0.46, -0.26, 0.85)]),
    ("cheek.r", "lower", (0.46, -0.26, 0.85), 0.978,
     [(0.46, -0.26, 0.85)]),
    ("chin", "lower", (0.0, -0.60, 0.78), 0.975,
     [(-0.17, -0.56, 0.80), (0.17, -0.56, 0.80), (0.0, -0.71, 0.70)]),
]

# unit-sphere z above which the mask keeps vertices; the crop leaves
# room behind the rim for the cages' closing vertices
_MASK_CUT = -0.12


def _bump(x, y, cx, cy, sx, sy):
    return np.exp(-(((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2))


def make_demo_head(subdivisions=5):
    """Open face mask sculpted from the front of an icosphere."""
    base = shapes.make_icosphere(subdivisions, radius=1.0)
    p = base.positions.copy()
    x, y, z = p[:, 0], p[:, 1], p[:, 2]

    # elongate, narrow the skull a touch, pull the rim area in smoothly
    p[:, 1] *= 1.12
    p[:, 0] *= 0.92
    p[:, 2] *= 1.0 - 0.10 / (1.0 + np.exp(8.0 * z))

    front = np.clip(z, 0.0, None)
    # nose, brow ridge, mouth and lower-lip ridges, chin and cheekbones,
    # all on the front; the lip ridges keep the lip handles on the
    # convex frontier so they stay usable as cage anchors
    p[:, 2] += front * (0.16 * _bump(x, y, 0.0, 0.02, 0.14, 0.20)
                        + 0.06 * _bump(x, y, 0.0, 0.38, 0.45, 0.14)
                        + 0.07 * _bump(x, y, 0.0, -0.36, 0.30, 0.12)
                        + 0.05 * _bump(x, y, 0.0, -0.48, 0.24, 0.10)
                        + 0.10 * _bump(x, y, 0.0, -0.72, 0.22, 0.20)
                        + 0.05 * _bump(x, y, -0.44, -0.26, 0.18, 0.20)
                        + 0.05 * _bump(x, y, 0.44, -0.26, 0.18, 0.20))
    # shallow eye sockets
    p[:, 2] -= front * (0.05 * _bump(x, y, -0.26, 0.18, 0.14, 0.10)
                        + 0.05 * _bump(x, y, 0.26, 0.18, 0.14, 0.10))
    # tiny asymmetric ripple so no four cage anchors are exactly coplanar
    ripple = (np.sin(11.0 * x + 1.0) + np.cos(7.0 * y + 2.0)
              + np.sin(5.0 * z + 3.0))
    p *= (1.0 + 2e-4 * ripple)[:, None]

    # crop to the front cap; triangles with any vertex behind the cut go
    keep = base.positions[:, 2] > _MASK_CUT
    tris = base.triangles[keep[base.triangles].all(axis=1)]
    used = np.unique(tris)
    remap = np.full(base.vertex_count, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return TriMesh(p[used], remap[tris])


def _cap_vertices(mesh, direction, min_cos):
    d = np.asarray(direction, dtype=np.float64)
    d /= np.linalg.norm(d)
    n = mesh.positions / np.linalg.norm(mesh.positions, axis=1)[:, None]
    return np.nonzero(n @ d > min_cos)[0]


def demo_map_doc(mesh):
    """Fat-pad map document for the demo face (load with padmap.load_map)."""
    pads = []
    used = set()
    for pad_id, region, direction, min_cos, handle_dirs in _PADS:
        verts = _cap_vertices(mesh, direction, min_cos)
        border = border_vertices(mesh, set(int(v) for v in verts))
        inner = np.asarray(sorted(set(verts.tolist()) - border),
                           dtype=np.int64)
        pts = mesh.positions[inner]
        handles = []
        for k, hd in enumerate(handle_dirs):
            hd = np.asarray(hd, dtype=np.float64)
            order = np.argsort(-(pts @ (hd / np.linalg.norm(hd))))
            # pads overlap, so keep anchors unique across the whole map
            anchor = next(int(inner[i]) for i in order
                          if int(inner[i]) not in used)
            used.add(anchor)
            handles.append({"id": f"{pad_id}.h{k:02d}", "anchor": anchor})
        pads.append({
            "id": pad_id,
            "region": region,
            "vertices": [int(v) for v in verts],
            "movable_border": [],
            "handles": handles,
        })
    return {"fingerprint": mesh.fingerprint(), "pads": pads}

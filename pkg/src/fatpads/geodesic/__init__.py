"""Geodesic distance fields over triangle meshes.

Two routes are provided: an exact polyhedral solver (window propagation
over unfolded faces) and a refined-Dijkstra approximation used both as a
fast fallback and as an independent oracle in tests. Fields solved from
a vertex keep their per-edge windows, so distances can also be queried
at arbitrary points on mesh edges without re-solving.
"""

import os
import struct
from pathlib import Path

import numpy as np

from .mmp import ExactSolver
from .refined import refined_dijkstra_distances

_MAGIC = b"FPGD0001"
CACHE_ENV = "FATPAD_CACHE_DIR"


class GeodesicField:
    """Single-source distances, optionally queryable on edge interiors."""

    def __init__(self, distances, method, source, solver=None, mesh=None):
        self.distances = np.asarray(distances, dtype=np.float64)
        self.distances.setflags(write=False)
        self.method = method
        self.source = source
        self._solver = solver
        self.mesh = mesh if mesh is not None else getattr(solver, "mesh", None)

    def distance_at_edge_point(self, va, vb, t):
        """Distance at the point (1-t)*va + t*vb on the edge (va, vb).

        Exact for the exact method: a field restored from the distance
        cache re-runs the window solve on first use, so cached and
        fresh fields answer identically. Dijkstra fields bound the value
        by walking along the edge from the nearer endpoint.
        """
        if (self._solver is None and self.method == "exact"
                and self.mesh is not None):
            solver = ExactSolver(self.mesh)
            solver.mesh = self.mesh
            solver.solve(self.source)
            self._solver = solver
        if self._solver is not None:
            return self._solver.distance_at_edge_point(va, vb, t)
        if self.mesh is None:
            raise ValueError("field has no mesh attached for edge queries")
        length = float(np.linalg.norm(self.mesh.positions[vb]
                                      - self.mesh.positions[va]))
        return min(self.distances[va] + t * length,
                   self.distances[vb] + (1.0 - t) * length)


def default_cache_dir():
    """Cache directory from the environment, or None when caching is off."""
    path = os.environ.get(CACHE_ENV)
    return Path(path) if path else None


def _cache_path(cache_dir, mesh, source, method):
    token = mesh.content_hash()
    return Path(cache_dir) / f"{token[:24]}-{method}-{source}.geo"


def _save_cache(path, mesh, source, method, distances):
    code = {"exact": 0, "dijkstra": 1}[method]
    blob = _MAGIC + mesh.content_hash().encode("ascii")
    blob += struct.pack("<qqq", source, code, len(distances))
    blob += np.ascontiguousarray(distances, dtype="<f8").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def _load_cache(path, mesh, source, method):
    try:
        blob = path.read_bytes()
    except OSError:
        return None
    if len(blob) < 8 + 64 + 24 or blob[:8] != _MAGIC:
        return None
    if blob[8:72].decode("ascii", "replace") != mesh.content_hash():
        return None
    src, code, n = struct.unpack("<qqq", blob[72:96])
    want = {"exact": 0, "dijkstra": 1}[method]
    if src != source or code != want or n != mesh.vertex_count:
        return None
    data = np.frombuffer(blob[96:], dtype="<f8")
    if len(data) != n:
        return None
    return data.astype(np.float64)


def solve_from(mesh, source, method="exact", cache_dir=None, keep_windows=True):
    """Distance field from a mesh vertex.

    method "exact" runs the window-propagation solver; "dijkstra" runs
    shortest paths on the plain edge graph. When a cache directory is
    given (or FATPAD_CACHE_DIR is set) vertex distances round-trip
    through a binary file keyed by mesh content hash and source id;
    cached fields drop their edge-interior query support.
    """
    if method not in ("exact", "dijkstra"):
        raise ValueError(f"unknown geodesic method {method!r}")
    source = int(source)
    if not 0 <= source < mesh.vertex_count:
        raise ValueError(f"source vertex {source} out of range")
    if cache_dir is None:
        cache_dir = default_cache_dir()
    if cache_dir:
        path = _cache_path(cache_dir, mesh, source, method)
        hit = _load_cache(path, mesh, source, method)
        if hit is not None:
            return GeodesicField(hit, method, source, mesh=mesh)

    if method == "exact":
        solver = ExactSolver(mesh)
        solver.mesh = mesh
        dist = solver.solve(source)
        field = GeodesicField(dist, method, source,
                              solver if keep_windows else None, mesh=mesh)
    else:
        dist = refined_dijkstra_distances(mesh, source, refinement=0)
        field = GeodesicField(dist, method, source, mesh=mesh)

    if cache_dir:
        _save_cache(path, mesh, source, method, field.distances)
    return field


def solve_from_point(mesh, triangle, barycentric, method="exact"):
    """Distance field from a surface point given as (triangle, barycentric).

    The point is inserted as a temporary vertex (splitting the host
    triangle, or both triangles sharing an edge when one coordinate is
    zero) and the field is solved on the modified mesh; returned
    distances cover only the original vertices.
    """
    from ..mesh import TriMesh

    bary = np.asarray(barycentric, dtype=np.float64)
    if bary.shape != (3,) or np.any(bary < -1e-12) or abs(bary.sum() - 1.0) > 1e-9:
        raise ValueError("barycentric coordinates must be non-negative and sum to 1")
    tri = mesh.triangles[int(triangle)]
    snap = 1e-9
    hot = bary > snap
    if hot.sum() == 1:
        return solve_from(mesh, int(tri[int(np.argmax(bary))]), method=method)

    point = bary @ mesh.positions[tri]
    n = mesh.vertex_count
    new_positions = np.vstack([mesh.positions, point[None, :]])
    faces = []
    if hot.sum() == 2:
        ia, ib = (int(tri[k]) for k in np.nonzero(hot)[0])
        for f in mesh.triangles:
            fl = [int(v) for v in f]
            if ia in fl and ib in fl:
                # split along the shared edge, preserving orientation
                for k in range(3):
                    if fl[k] in (ia, ib) and fl[(k + 1) % 3] in (ia, ib):
                        faces.append((fl[k], n, fl[(k + 2) % 3]))
                        faces.append((n, fl[(k + 1) % 3], fl[(k + 2) % 3]))
                        break
            else:
                faces.append(tuple(fl))
    else:
        for fi, f in enumerate(mesh.triangles):
            fl = [int(v) for v in f]
            if fi == int(triangle):
                faces.extend(((fl[0], fl[1], n), (fl[1], fl[2], n), (fl[2], fl[0], n)))
            else:
                faces.append(tuple(fl))
    refined = TriMesh(new_positions, np.asarray(faces, dtype=np.int64))
    field = solve_from(refined, n, method=method, cache_dir=False, keep_windows=False)
    return GeodesicField(field.distances[:n], method, None)


def oracle_refined_dijkstra(mesh, source, refinement=8):
    """Independent distance oracle: Dijkstra on a chord-refined edge graph."""
    dist = refined_dijkstra_distances(mesh, source, refinement=refinement)
    return GeodesicField(dist, f"refined-dijkstra-{refinement}", int(source))

"""Batch build pipeline and the project bundle it produces.

build_project runs the five stages (fatpad-map, geodesics, attenuation,
cage-builder, green-coords) against a mesh and pad-map file, writes
every artifact plus a bundle manifest into the output directory, and
reports per-stage timing. Reruns with unchanged inputs rewrite
identical bytes. load_bundle reads the artifact set back and
cross-checks every fingerprint before anything is returned.
"""

import json
import logging
import time
from pathlib import Path

import numpy as np

from .attenuation import build_weight_matrix, load_weights, save_weights
from .cage import CageParams, build_both_cages, load_cage, save_cage
from .geodesic import solve_from
from .geodesic import solve_from_point as geo_solve_from_point
from .greencoords import bind, load_binding, save_binding
from .mesh import TriMesh, fingerprints_match, load_obj
from .padmap import load_map
from .posing import PoseRig

log = logging.getLogger(__name__)

STAGES = ("fatpad-map", "geodesics", "attenuation", "cage-builder",
          "green-coords")

# exact geodesic fields are solved per pad on a collar submesh: the
# attenuation only ever reads distances inside the pad, and the window
# solver's cost grows superlinearly with vertex count, so solving on
# the full demo head would blow the build budget for no benefit
COLLAR_RINGS = 3


class PipelineError(RuntimeError):
    """A build stage failed; .stage names it."""

    def __init__(self, stage, message):
        super().__init__(message)
        self.stage = stage


class BundleError(ValueError):
    pass


class _CollarField:
    """Distance field solved on a collar submesh, queried with full-mesh
    vertex and triangle ids. Queries that leave the collar raise instead
    of guessing; they would mean the collar is too small for this pad."""

    __slots__ = ("distances", "method", "source", "mesh", "_field", "_sub",
                 "_sub_to_full", "_full_to_sub", "_tri_full_to_sub")

    def __init__(self, distances, field, collar, source, mesh):
        sub, sub_to_full, full_to_sub, tri_full_to_sub = collar
        self.distances = distances
        self.method = field.method
        self.source = source
        self.mesh = mesh
        self._field = field
        self._sub = sub
        self._sub_to_full = sub_to_full
        self._full_to_sub = full_to_sub
        self._tri_full_to_sub = tri_full_to_sub

    def _sub_vertex(self, v):
        s = int(self._full_to_sub[int(v)])
        if s < 0:
            raise ValueError(
                f"vertex {v} leaves the geodesic collar of vertex "
                f"{self.source}; widen the collar")
        return s

    def distance_at_edge_point(self, va, vb, t):
        return self._field.distance_at_edge_point(
            self._sub_vertex(va), self._sub_vertex(vb), t)

    def solve_from_point(self, triangle, barycentric):
        """Full-mesh-indexed distances from a point, solved on the collar."""
        ti = int(self._tri_full_to_sub[int(triangle)])
        if ti < 0:
            raise ValueError(
                f"triangle {triangle} leaves the geodesic collar of vertex "
                f"{self.source}; widen the collar")
        field = geo_solve_from_point(self._sub, ti, barycentric,
                                     method=self.method)
        distances = np.full(self.mesh.vertex_count, np.inf)
        distances[self._sub_to_full] = field.distances
        return distances


def collar_submesh(mesh, vertex_ids, rings=COLLAR_RINGS):
    """Submesh of the given vertices grown by `rings` of neighbors.

    Returns (submesh, sub_to_full vertex ids, full_to_sub vertex ids,
    full_to_sub triangle ids); the inverse maps hold -1 outside.
    """
    inside = np.zeros(mesh.vertex_count, dtype=bool)
    inside[np.asarray(vertex_ids, dtype=np.int64)] = True
    for _ in range(rings):
        frontier = np.nonzero(inside)[0]
        inside[mesh.adjacency[frontier].indices] = True
    sub_to_full = np.nonzero(inside)[0]
    full_to_sub = np.full(mesh.vertex_count, -1, dtype=np.int64)
    full_to_sub[sub_to_full] = np.arange(len(sub_to_full))
    keep = np.nonzero(inside[mesh.triangles].all(axis=1))[0]
    tri_full_to_sub = np.full(len(mesh.triangles), -1, dtype=np.int64)
    tri_full_to_sub[keep] = np.arange(len(keep))
    sub = TriMesh(mesh.positions[sub_to_full],
                  full_to_sub[mesh.triangles[keep]])
    return sub, sub_to_full, full_to_sub, tri_full_to_sub


def handle_field(mesh, padmap, handle_id, method="exact", cache_dir=None,
                 rings=COLLAR_RINGS):
    """Distance field from one handle's anchor, sized for attenuation."""
    handle = padmap.handle(handle_id)
    if method != "exact":
        return solve_from(mesh, handle.anchor, method=method,
                          cache_dir=cache_dir)
    pad = padmap.pad(handle.pad_id)
    collar = collar_submesh(mesh, pad.vertices, rings)
    sub, sub_to_full, full_to_sub, _ = collar
    field = solve_from(sub, int(full_to_sub[handle.anchor]), method="exact",
                       cache_dir=cache_dir)
    distances = np.full(mesh.vertex_count, np.inf)
    distances[sub_to_full] = field.distances
    return _CollarField(distances, field, collar, handle.anchor, mesh)


def _run_stage(name, fn, on_stage):
    t0 = time.perf_counter()
    try:
        result = fn()
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, str(exc)) from exc
    elapsed = time.perf_counter() - t0
    if on_stage is not None:
        on_stage(name, elapsed)
    return result


def build_project(mesh_path, map_path, out_dir, alpha_base=0.05,
                  geodesic="exact", cache_dir=None, collar_rings=COLLAR_RINGS,
                  on_stage=None):
    """Run the whole pipeline; returns the bundle manifest path."""
    if geodesic not in ("exact", "dijkstra"):
        raise PipelineError("geodesics",
                            f"unknown geodesic method {geodesic!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def load_inputs():
        try:
            mesh_bytes = Path(mesh_path).read_bytes()
            map_bytes = Path(map_path).read_bytes()
        except OSError as exc:
            raise PipelineError("fatpad-map", str(exc)) from exc
        mesh = load_obj(mesh_bytes)
        padmap = load_map(map_bytes, mesh)
        (out / "mesh.obj").write_bytes(mesh_bytes)
        (out / "map.json").write_bytes(map_bytes)
        return mesh, padmap

    mesh, padmap = _run_stage("fatpad-map", load_inputs, on_stage)

    def solve_fields():
        return {h.handle_id: handle_field(mesh, padmap, h.handle_id,
                                          method=geodesic,
                                          cache_dir=cache_dir,
                                          rings=collar_rings)
                for h in sorted(padmap.handles, key=lambda h: h.handle_id)}

    fields = _run_stage("geodesics", solve_fields, on_stage)

    def attenuate():
        matrices = [build_weight_matrix(mesh, padmap, hid, method=geodesic,
                                        field=fields[hid])
                    for hid in sorted(fields)]
        (out / "weights.json").write_bytes(save_weights(matrices, mesh,
                                                        padmap))
        return matrices

    _run_stage("attenuation", attenuate, on_stage)

    def build_cages():
        upper, lower = build_both_cages(mesh, padmap,
                                        CageParams(alpha_base=alpha_base))
        cages = {"upper": upper, "lower": lower}
        # a handle whose anchor fell inside the anchor hull has no cage
        # vertex; the bundle would carry weights nothing can pose
        unbound = [h.handle_id for h in padmap.handles
                   if h.handle_id not in
                   cages[padmap.pad(h.pad_id).region].handle_binding]
        if unbound:
            raise PipelineError(
                "cage-builder",
                "handles not bound to any cage vertex (anchor interior "
                "to the region hull): " + ", ".join(sorted(unbound)))
        for region, cage in cages.items():
            (out / f"cage.{region}.json").write_bytes(save_cage(cage))
        return cages

    cages = _run_stage("cage-builder", build_cages, on_stage)

    def bind_cages():
        for region, cage in cages.items():
            (out / f"binding.{region}.bin").write_bytes(
                save_binding(bind(mesh, cage)))
        manifest = {
            "mesh": "mesh.obj",
            "map": "map.json",
            "cages": {r: f"cage.{r}.json" for r in cages},
            "weights": "weights.json",
            "bindings": {r: f"binding.{r}.bin" for r in cages},
        }
        blob = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
        (out / "bundle.json").write_bytes(blob)

    _run_stage("green-coords", bind_cages, on_stage)
    return out / "bundle.json"


class ProjectBundle:
    """A consistent artifact set plus the posing rig built from it."""

    __slots__ = ("root", "mesh", "padmap", "cages", "bindings", "weights",
                 "rig")

    def __init__(self, root, mesh, padmap, cages, bindings, weights, rig):
        self.root = root
        self.mesh = mesh
        self.padmap = padmap
        self.cages = cages
        self.bindings = bindings
        self.weights = weights
        self.rig = rig


def load_bundle(path):
    """Load a bundle manifest and every artifact it references.

    Any missing file, parse failure, or fingerprint mismatch raises
    BundleError without returning a partially-usable bundle.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise BundleError(f"cannot read bundle: {exc}") from None
    except json.JSONDecodeError as exc:
        raise BundleError(f"bundle manifest is not valid JSON: {exc}") \
            from None
    for key in ("mesh", "map", "cages", "weights", "bindings"):
        if key not in doc:
            raise BundleError(f"bundle manifest missing {key!r}")
    root = path.parent

    try:
        mesh = load_obj((root / doc["mesh"]).read_bytes())
        padmap = load_map((root / doc["map"]).read_bytes(), mesh)
        matrices = load_weights((root / doc["weights"]).read_bytes(),
                                mesh=mesh, padmap=padmap)
        cages = {r: load_cage((root / p).read_bytes())
                 for r, p in sorted(doc["cages"].items())}
        bindings = {r: load_binding((root / p).read_bytes())
                    for r, p in sorted(doc["bindings"].items())}
    except OSError as exc:
        raise BundleError(f"bundle artifact unreadable: {exc}") from None
    except ValueError as exc:
        raise BundleError(f"inconsistent bundle: {exc}") from None

    for region, cage in cages.items():
        if cage.region != region:
            raise BundleError(f"cage file for {region!r} holds region "
                              f"{cage.region!r}")
        binding = bindings.get(region)
        if binding is None:
            raise BundleError(f"bundle has no binding for cage {region!r}")
        if not fingerprints_match(binding.mesh_fingerprint,
                                  mesh.fingerprint()):
            raise BundleError(f"binding {region!r} was built for a "
                              f"different mesh")
        if binding.cage_hash != cage.content_hash():
            raise BundleError(f"binding {region!r} was built for a "
                              f"different cage")

    try:
        rig = PoseRig(mesh, padmap, cages, bindings,
                      {m.handle_id: m for m in matrices})
    except ValueError as exc:
        raise BundleError(f"inconsistent bundle: {exc}") from None
    return ProjectBundle(root, mesh, padmap, cages, bindings,
                         {m.handle_id: m for m in matrices}, rig)

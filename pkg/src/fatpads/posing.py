"""Interactive posing: cage edits blended onto the mesh per fat pad.

A PoseRig bundles the immutable assets (mesh, pad map, one cage and
green-coordinate binding per region, one weight matrix per handle); a
PoseState carries everything an editing session mutates. Moving a
handle displaces its cage vertex, re-evaluates the green coordinates of
that cage only, and blends the result onto the mesh with the per-vertex
weight

    w(v) = max over active handles h of W_h(v)
    V'   = base + (V_gc - base) * w

so vertices with w = 0 keep their committed positions bitwise and
vertices with w = 1 follow the cage deformation exactly. Commits
re-anchor the base at the current pose; undo restores the previous
committed pose including cage positions.
"""

import json
import logging

import numpy as np

from .cage import REGIONS
from .greencoords import evaluate
from .mesh import fingerprints_match

log = logging.getLogger(__name__)

DEFAULT_UNDO_DEPTH = 64


class PoseError(ValueError):
    pass


class PoseRig:
    """Immutable posing assets validated against each other.

    cages and bindings are keyed by region, weights by handle id (a
    list of WeightMatrix is accepted too). Every handle of the pad map
    must be bound to a cage vertex of its pad's region and must carry a
    weight matrix whose positive-weight vertices lie inside that cage;
    exterior vertices are frozen by the binding, so letting them carry
    weight would tear the surface at the first edit.
    """

    __slots__ = ("mesh", "padmap", "cages", "bindings", "weights",
                 "handle_sites")

    def __init__(self, mesh, padmap, cages, bindings, weights):
        self.mesh = mesh
        self.padmap = padmap
        self.cages = dict(cages)
        self.bindings = dict(bindings)
        if not isinstance(weights, dict):
            weights = {m.handle_id: m for m in weights}
        self.weights = dict(weights)

        for region, cage in self.cages.items():
            if region not in REGIONS:
                raise PoseError(f"unknown cage region {region!r}")
            binding = self.bindings.get(region)
            if binding is None:
                raise PoseError(f"cage {region!r} has no binding")
            if binding.mesh_vertex_count != mesh.vertex_count:
                raise PoseError(
                    f"binding {region!r} covers {binding.mesh_vertex_count} "
                    f"mesh vertices, mesh has {mesh.vertex_count}")
            if binding.cage_vertex_count != len(cage.vertices):
                raise PoseError(
                    f"binding {region!r} expects "
                    f"{binding.cage_vertex_count} cage vertices, cage has "
                    f"{len(cage.vertices)}")

        # handle id -> (region, cage vertex index)
        sites = {}
        for handle in padmap.handles:
            pad = padmap.pad(handle.pad_id)
            cage = self.cages.get(pad.region)
            if cage is None or handle.handle_id not in cage.handle_binding:
                raise PoseError(
                    f"handle {handle.handle_id!r} is not bound to the "
                    f"{pad.region} cage")
            sites[handle.handle_id] = (pad.region,
                                       cage.handle_binding[handle.handle_id])
            matrix = self.weights.get(handle.handle_id)
            if matrix is None:
                raise PoseError(
                    f"no weight matrix for handle {handle.handle_id!r}")
            moved = matrix.vertex_ids[matrix.weights > 0.0]
            if moved.size and moved.max() >= mesh.vertex_count:
                raise PoseError(
                    f"weight matrix {handle.handle_id!r} references vertex "
                    f"{int(moved.max())} beyond the mesh")
            outside = moved[~self.bindings[pad.region].interior[moved]]
            if outside.size:
                raise PoseError(
                    f"handle {handle.handle_id!r} weights vertex "
                    f"{int(outside[0])} outside the {pad.region} cage")
        self.handle_sites = sites

    @property
    def fingerprint(self):
        return self.mesh.fingerprint()


class PoseState:
    """Mutable session state over a PoseRig.

    base_positions is the mesh at the last commit, current_positions the
    live pose, cage_states the live cage vertices per region. Handles
    moved since the last commit accumulate in active_handles; commit
    pushes the superseded pose onto the bounded undo stack.
    """

    __slots__ = ("rig", "base_positions", "current_positions", "cage_states",
                 "active_handles", "undo_stack", "undo_depth",
                 "_committed_cages", "_vgc")

    def __init__(self, rig, undo_depth=DEFAULT_UNDO_DEPTH):
        if undo_depth < 1:
            raise PoseError("undo depth must be at least 1")
        self.rig = rig
        self.base_positions = rig.mesh.positions.copy()
        self.current_positions = self.base_positions.copy()
        self.cage_states = {r: c.vertices.copy()
                            for r, c in rig.cages.items()}
        self.active_handles = set()
        self.undo_stack = []
        self.undo_depth = int(undo_depth)
        self._committed_cages = {r: v.copy()
                                 for r, v in self.cage_states.items()}
        self._vgc = {r: None for r in rig.cages}


def rest_state(rig, undo_depth=DEFAULT_UNDO_DEPTH):
    """Fresh session at the rig's rest pose."""
    return PoseState(rig, undo_depth)


def _vgc_for(state, region):
    """Green-coordinate evaluation of one cage, cached until it moves."""
    cached = state._vgc.get(region)
    if cached is None:
        cached = evaluate(state.rig.bindings[region],
                          state.cage_states[region])
        state._vgc[region] = cached
    return cached


def _reblend(state):
    """Recompute current_positions from base and the active handles.

    Per vertex the blend weight is the max over active handles; when
    handles of both cages reach the same vertex the cage of the larger
    weight wins (first region in REGIONS order on a tie). Vertices with
    no positive weight keep their base rows bitwise.
    """
    rig = state.rig
    n = rig.mesh.vertex_count
    wmax = np.zeros(n)
    winner = np.full(n, -1, dtype=np.int8)
    by_region = {r: [] for r in rig.cages}
    for hid in state.active_handles:
        by_region[rig.handle_sites[hid][0]].append(hid)

    for k, region in enumerate(REGIONS):
        handles = by_region.get(region)
        if not handles:
            continue
        scratch = np.zeros(n)
        for hid in sorted(handles):
            matrix = rig.weights[hid]
            np.maximum.at(scratch, matrix.vertex_ids, matrix.weights)
        better = scratch > wmax
        wmax[better] = scratch[better]
        winner[better] = k

    current = state.base_positions.copy()
    for k, region in enumerate(REGIONS):
        rows = winner == k
        if not np.any(rows):
            continue
        vgc = _vgc_for(state, region)
        w = wmax[rows][:, None]
        current[rows] = (state.base_positions[rows]
                         + (vgc[rows] - state.base_positions[rows]) * w)
    state.current_positions = current


def move_handle(state, handle_id, new_position):
    """Drag one handle: move its cage vertex and reblend the mesh."""
    site = state.rig.handle_sites.get(handle_id)
    if site is None:
        raise PoseError(f"unknown handle {handle_id!r}")
    region, cage_vertex = site
    if cage_vertex in state.rig.cages[region].fixed:
        raise PoseError(f"handle {handle_id!r} is bound to fixed cage "
                        f"vertex {cage_vertex}")
    p = np.asarray(new_position, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(p)):
        raise PoseError(f"handle {handle_id!r} given a non-finite position")
    state.cage_states[region][cage_vertex] = p
    state._vgc[region] = None
    state.active_handles.add(handle_id)
    _reblend(state)


def committed_position(state, handle_id):
    """Cage-vertex position of one handle at the last commit.

    Pose-script displacements and service drags are relative to this
    base, so recorders and replayers share one reference point.
    """
    site = state.rig.handle_sites.get(handle_id)
    if site is None:
        raise PoseError(f"unknown handle {handle_id!r}")
    region, cage_vertex = site
    return state._committed_cages[region][cage_vertex].copy()


def pending_edits(state):
    """Displacement of every active handle's cage vertex since the last
    commit, ordered by handle id (what a recorder should log before
    committing)."""
    out = []
    for hid in sorted(state.active_handles):
        region, cage_vertex = state.rig.handle_sites[hid]
        d = (state.cage_states[region][cage_vertex]
             - state._committed_cages[region][cage_vertex])
        out.append((hid, d))
    return out


def commit(state):
    """Re-anchor the base at the current pose.

    The superseded pose (base and cage positions of the previous
    commit) is pushed onto the undo stack; the oldest snapshot falls
    off once the stack exceeds the depth limit.
    """
    state.undo_stack.append((state.base_positions, state._committed_cages))
    if len(state.undo_stack) > state.undo_depth:
        state.undo_stack.pop(0)
    state.base_positions = state.current_positions.copy()
    state._committed_cages = {r: v.copy()
                              for r, v in state.cage_states.items()}
    state.active_handles.clear()


def undo(state):
    """Drop back to the previous committed pose, cage positions included.

    Uncommitted edits are discarded. Returns False (and leaves the
    state untouched) when there is nothing to undo.
    """
    if not state.undo_stack:
        return False
    base, cages = state.undo_stack.pop()
    state.base_positions = base
    state.current_positions = base.copy()
    state.cage_states = {r: v.copy() for r, v in cages.items()}
    state._committed_cages = cages
    state.active_handles.clear()
    state._vgc = {r: None for r in state.rig.cages}
    return True


class PoseScript:
    """Ordered committed edits, replayable against a matching rig.

    Each edit displaces one handle's cage vertex relative to where the
    previous commits left it, so a recorded session replays to the same
    pose edit by edit.
    """

    __slots__ = ("fingerprint", "edits")

    def __init__(self, fingerprint, edits):
        self.fingerprint = dict(fingerprint)
        self.edits = []
        for hid, d in edits:
            try:
                d = np.asarray(d, dtype=np.float64).reshape(3)
            except (TypeError, ValueError):
                raise PoseError(f"edit of handle {hid!r} has a malformed "
                                f"displacement") from None
            if not np.all(np.isfinite(d)):
                raise PoseError(f"edit of handle {hid!r} has a non-finite "
                                f"displacement")
            self.edits.append((str(hid), d))

    def to_dict(self):
        return {"fingerprint": dict(self.fingerprint),
                "edits": [{"handle": hid, "displacement": d.tolist()}
                          for hid, d in self.edits]}


def save_pose_script(script):
    """Canonical JSON bytes for a PoseScript."""
    return json.dumps(script.to_dict(), sort_keys=True,
                      separators=(",", ":")).encode()


def load_pose_script(data):
    """Parse and validate a pose script document."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    if isinstance(data, str):
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise PoseError(f"pose script is not valid JSON: {exc}") from None
    else:
        doc = data
    if not isinstance(doc, dict) or "fingerprint" not in doc \
            or "edits" not in doc:
        raise PoseError("pose script must carry 'fingerprint' and 'edits'")
    if not isinstance(doc["edits"], list):
        raise PoseError("pose script 'edits' must be a list")
    edits = []
    for k, entry in enumerate(doc["edits"]):
        if not isinstance(entry, dict) or "handle" not in entry \
                or "displacement" not in entry:
            raise PoseError(f"edit #{k} must carry 'handle' and "
                            f"'displacement'")
        d = entry["displacement"]
        if not isinstance(d, (list, tuple)) or len(d) != 3:
            raise PoseError(f"edit #{k}: displacement must be [dx, dy, dz]")
        edits.append((entry["handle"], d))
    return PoseScript(doc["fingerprint"], edits)


def apply_pose_script(state, script):
    """Replay a pose script: move each handle in file order, committing
    after every edit. The script fingerprint must match the rig's."""
    try:
        ok = fingerprints_match(script.fingerprint, state.rig.fingerprint)
    except (KeyError, TypeError, AttributeError):
        raise PoseError("pose script fingerprint is malformed") from None
    if not ok:
        raise PoseError("pose script fingerprint does not match the rig")
    for hid, d in script.edits:
        site = state.rig.handle_sites.get(hid)
        if site is None:
            raise PoseError(f"unknown handle {hid!r}")
        region, cage_vertex = site
        move_handle(state, hid, state.cage_states[region][cage_vertex] + d)
        commit(state)
    return state

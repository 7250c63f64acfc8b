"""Exact polyhedral geodesics by window propagation over unfolded faces.

Distance information travels as "windows": intervals on mesh edges that
remember where an unfolded pseudosource lies relative to the edge. A
window bounds the exact distance for every point x of its interval by
sigma + |pseudosource - x|; propagation pushes the wedge of rays through
the interval across the adjacent face. New windows are clipped against
anything already proven at least as good, so every stored window
improves the field somewhere and the process terminates with the exact
distance function on edges and vertices.

The pseudosource coordinates are carried explicitly in each window and
mapped exactly from frame to frame. Reconstructing them from interval
endpoint distances, as the textbook parameterization does, cancels
catastrophically on thin windows and breaks tie detection, which in turn
lets duplicate windows multiply on flat regions.
"""

import heapq
import math

import numpy as np

EPS_ANGLE = 1e-9  # vertices with total angle > 2*pi + EPS_ANGLE respawn windows


class EdgeGeometry:
    """Per-mesh connectivity and unfolding data shared by all solves."""

    def __init__(self, mesh):
        self.mesh = mesh
        V = mesh.positions
        F = mesh.triangles
        self.n_vertices = len(V)

        edge_index = {}
        e_v0, e_v1, e_len = [], [], []
        e_face = []
        e_opp = []
        e_unfold = []

        def edge_id(a, b):
            key = (a, b) if a < b else (b, a)
            eid = edge_index.get(key)
            if eid is None:
                eid = len(e_v0)
                edge_index[key] = eid
                e_v0.append(key[0])
                e_v1.append(key[1])
                e_len.append(float(np.linalg.norm(V[key[1]] - V[key[0]])))
                e_face.append([-1, -1])
                e_opp.append([-1, -1])
                e_unfold.append([(0.0, 0.0), (0.0, 0.0)])
            return eid

        face_opp_edge = np.empty((len(F), 3), dtype=np.int64)
        for fi, (a, b, c) in enumerate(F):
            a, b, c = int(a), int(b), int(c)
            for k, (u, w, opp) in enumerate(((b, c, a), (c, a, b), (a, b, c))):
                eid = edge_id(u, w)
                slot = 0 if e_face[eid][0] == -1 else 1
                if e_face[eid][slot] != -1:
                    raise ValueError("mesh edge shared by more than two triangles")
                e_face[eid][slot] = fi
                e_opp[eid][slot] = opp
                p0 = V[e_v0[eid]]
                d = V[e_v1[eid]] - p0
                L = e_len[eid]
                q = V[opp] - p0
                cx = float(np.dot(q, d) / L) if L > 0 else 0.0
                cy2 = float(np.dot(q, q)) - cx * cx
                cy = math.sqrt(cy2) if cy2 > 0 else 0.0
                e_unfold[eid][slot] = (cx, cy)
                face_opp_edge[fi, k] = eid

        self.edge_index = edge_index
        self.e_v0 = np.array(e_v0, dtype=np.int64)
        self.e_v1 = np.array(e_v1, dtype=np.int64)
        self.e_len = np.array(e_len)
        self.e_face = np.array(e_face, dtype=np.int64)
        self.e_opp = np.array(e_opp, dtype=np.int64)
        self.e_unfold = e_unfold
        # face_opp_edge[f, k] is the edge opposite corner k of face f
        self.face_opp_edge = face_opp_edge

        # vertex -> (face, corner) incidence, angle sums, boundary flags
        n = self.n_vertices
        self.vertex_faces = [[] for _ in range(n)]
        angle = np.zeros(n)
        for fi, (a, b, c) in enumerate(F):
            pa, pb, pc = V[a], V[b], V[c]
            for vid, corner, p, q, r in ((a, 0, pa, pb, pc), (b, 1, pb, pc, pa),
                                         (c, 2, pc, pa, pb)):
                self.vertex_faces[int(vid)].append((fi, corner))
                u = q - p
                w = r - p
                nu = np.linalg.norm(u)
                nw = np.linalg.norm(w)
                if nu > 0 and nw > 0:
                    cosang = float(np.dot(u, w) / (nu * nw))
                    angle[int(vid)] += math.acos(min(1.0, max(-1.0, cosang)))
        boundary = np.zeros(n, dtype=bool)
        be = self.e_face[:, 1] == -1
        boundary[self.e_v0[be]] = True
        boundary[self.e_v1[be]] = True
        # geodesics pass through saddle and boundary vertices only; paths
        # through flat vertices arrive as closed wedge-boundary limits
        self.is_spawner = boundary | (angle > 2 * math.pi + EPS_ANGLE)

        lo = V.min(axis=0) if len(V) else np.zeros(3)
        hi = V.max(axis=0) if len(V) else np.zeros(3)
        self.scale = float(np.linalg.norm(hi - lo)) or 1.0


def geometry_for(mesh):
    geo = getattr(mesh, "_mmp_geometry", None)
    if geo is None:
        geo = EdgeGeometry(mesh)
        try:
            object.__setattr__(mesh, "_mmp_geometry", geo)
        except AttributeError:
            pass
    return geo


def _crossings(p1, q1, s1, p2, q2, s2, lo, hi, tol):
    """x in [lo,hi] where s1 + sqrt((x-p1)^2+q1^2) = s2 + sqrt((x-p2)^2+q2^2).

    The expanded quadratic cancels catastrophically when the sigma gap
    is small: the true discriminant is O(gap^2) but is computed as a
    difference of O(1) terms, so even its sign is unreliable. Algebraic
    roots therefore serve only as starting guesses; each is polished by
    Newton on the residual and kept only if the residual vanishes.
    """
    s = s2 - s1

    def f(x):
        return math.hypot(x - p1, q1) - math.hypot(x - p2, q2) - s

    def fp(x):
        r1 = math.hypot(x - p1, q1)
        r2 = math.hypot(x - p2, q2)
        g = 0.0
        if r1 > 0.0:
            g += (x - p1) / r1
        if r2 > 0.0:
            g -= (x - p2) / r2
        return g

    guesses = []
    denom = 2.0 * (p1 - p2)
    if abs(denom) > 1e-300:
        # crossover of the sigma-free curves: exact when s == 0 and a
        # sound Newton anchor whenever |s| is small
        guesses.append((p1 * p1 + q1 * q1 - p2 * p2 - q2 * q2) / denom)
    if abs(s) >= 1e-300:
        c1 = 2.0 * (p2 - p1)
        c0 = p1 * p1 + q1 * q1 - p2 * p2 - q2 * q2
        A = c1 * c1 - 4.0 * s * s
        B = 2.0 * c1 * (s * s + c0) + 8.0 * s * s * p1
        C = (s * s + c0) ** 2 - 4.0 * s * s * (p1 * p1 + q1 * q1)
        if abs(A) < 1e-300:
            if abs(B) > 1e-300:
                guesses.append(-C / B)
        else:
            disc = B * B - 4.0 * A * C
            if disc > 0.0:
                sq = math.sqrt(disc)
                guesses.append((-B + sq) / (2.0 * A))
                guesses.append((-B - sq) / (2.0 * A))
            else:
                # noise-negative discriminant near tangency; the vertex
                # of the parabola is the best double-root estimate
                guesses.append(-B / (2.0 * A))
    out = []
    for r in guesses:
        for _ in range(3):
            g = fp(r)
            if abs(g) < 1e-300:
                break
            step = f(r) / g
            r -= step
            if abs(step) < 1e-15 * (abs(r) + 1.0):
                break
        r = min(hi, max(lo, r))
        if abs(f(r)) < tol and all(abs(r - o) > tol for o in out):
            out.append(r)
    return out


class Window:
    __slots__ = ("b0", "b1", "px", "py", "sigma", "edge", "slot")

    def __init__(self, b0, b1, px, py, sigma, edge, slot):
        self.b0 = b0
        self.b1 = b1
        self.px = px  # pseudosource, py >= 0 by convention
        self.py = py
        self.sigma = sigma
        self.edge = edge  # edge id
        self.slot = slot  # face slot this window propagates into

    def min_distance(self):
        if self.b0 <= self.px <= self.b1:
            return self.sigma + self.py
        return self.sigma + math.hypot(min(abs(self.px - self.b0),
                                           abs(self.px - self.b1)), self.py)

    def value(self, x):
        xc = min(self.b1, max(self.b0, x))
        v = self.sigma + math.hypot(xc - self.px, self.py)
        if x != xc:
            v += abs(x - xc)  # continue along the edge itself
        return v


class ExactSolver:
    """Single-source exact geodesic solve; keeps per-edge windows for queries."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.geo = geometry_for(mesh)
        self.dist = None
        self.edge_windows = None

    # -- public -----------------------------------------------------------

    def solve(self, source):
        geo = self.geo
        n = geo.n_vertices
        if not 0 <= source < n:
            raise ValueError(f"source vertex {source} out of range")
        self.dist = np.full(n, np.inf)
        self.edge_windows = [[] for _ in range(len(geo.e_v0))]
        self._heap = []
        self._seq = 0
        self._tol = 1e-12 * geo.scale

        self.dist[source] = 0.0
        self._spawn_from_vertex(source)
        heap = self._heap
        while heap:
            key, _, kind, payload = heapq.heappop(heap)
            if kind == 1:
                v = payload
                if key > self.dist[v] + self._tol:
                    continue  # superseded by a later improvement
                self._spawn_from_vertex(v)
            else:
                w = payload
                if w.b1 - w.b0 < self._tol:
                    continue  # trimmed away since it was queued
                # propagate only the parts the current field has not beaten
                doms = self._dominators(w.edge, exclude=w)
                for a, b in self._clip_segments(w.px, w.py, w.sigma, w.b0,
                                                w.b1, doms, strict=True):
                    if b - a >= self._tol:
                        self._propagate(Window(a, b, w.px, w.py, w.sigma,
                                               w.edge, w.slot))
        return self.dist

    def distance_at_edge_point(self, va, vb, t):
        """Distance at the point va + t*(vb - va) on edge (va, vb)."""
        geo = self.geo
        key = (va, vb) if va < vb else (vb, va)
        eid = geo.edge_index.get(key)
        if eid is None:
            raise ValueError(f"({va}, {vb}) is not a mesh edge")
        L = geo.e_len[eid]
        x = t * L if va == geo.e_v0[eid] else (1.0 - t) * L
        best = min(self.dist[geo.e_v0[eid]] + x, self.dist[geo.e_v1[eid]] + (L - x))
        for w in self.edge_windows[eid]:
            v = w.value(x)
            if v < best:
                best = v
        return float(best)

    # -- internals ----------------------------------------------------------

    def _push_window(self, w):
        self._seq += 1
        heapq.heappush(self._heap, (w.min_distance(), self._seq, 0, w))

    def _relax(self, v, value):
        if value < self.dist[v] - self._tol:
            self.dist[v] = value
            if self.geo.is_spawner[v]:
                self._seq += 1
                heapq.heappush(self._heap, (value, self._seq, 1, v))

    def _spawn_from_vertex(self, v):
        geo = self.geo
        sigma = float(self.dist[v])
        for fi, corner in geo.vertex_faces[v]:
            eid = geo.face_opp_edge[fi, corner]
            slot = 0 if geo.e_face[eid, 0] == fi else 1
            cx, cy = geo.e_unfold[eid][slot]
            self._insert(Window(0.0, geo.e_len[eid], cx, cy, sigma, eid, 1 - slot))

    def _dominators(self, eid, exclude=None):
        """Competing distance estimates on an edge as (px, py, sigma, lo, hi)."""
        geo = self.geo
        L = geo.e_len[eid]
        doms = []
        for o in self.edge_windows[eid]:
            if o is not exclude and o.b1 - o.b0 >= self._tol:
                doms.append((o.px, o.py, o.sigma, o.b0, o.b1))
        d_v0 = self.dist[geo.e_v0[eid]]
        d_v1 = self.dist[geo.e_v1[eid]]
        if np.isfinite(d_v0):
            doms.append((-d_v0, 0.0, 0.0, 0.0, L))  # value = dist[v0] + x
        if np.isfinite(d_v1):
            doms.append((L + d_v1, 0.0, 0.0, 0.0, L))  # value = dist[v1] + (L-x)
        return doms

    def _clip_segments(self, px, py, sigma, b0, b1, doms, strict):
        """Parts of [b0,b1] no dominator wins.

        A dominator wins outright where its value is smaller by more than
        tol. It additionally wins value ties when this window is its
        re-emission, sigma == sigma_dom + |P - P_dom|: by the triangle
        inequality such a window sits at or above the dominator on the
        whole line and its wedge repeats coverage the dominator already
        propagates. Vertex respawns are exactly that shape, and without
        the rule they fragment the primary wavefront and multiply. Ties
        between genuinely distinct routes (cut locus) are never dropped;
        both continuations matter. strict=True additionally demands a
        sigma gap, so two identical pending windows cannot both discard
        each other at pop time.
        """
        tol = self._tol
        root_tol = max(tol, 1e-9 * self.geo.scale)
        segments = [(b0, b1)]
        for p2, q2, s2, ob0, ob1 in doms:
            if not segments:
                break
            dp = math.hypot(px - p2, py - q2)
            absorbing = abs(s2 + dp - sigma) <= 2.0 * tol
            if strict:
                absorbing = absorbing and s2 <= sigma - tol
            margin = tol if absorbing else -tol
            nxt = []
            for lo, hi in segments:
                olo, ohi = max(lo, ob0), min(hi, ob1)
                if ohi - olo < tol:
                    nxt.append((lo, hi))
                    continue
                cuts = _crossings(px, py, sigma + margin, p2, q2, s2,
                                  olo, ohi, root_tol)
                pts = sorted({olo, ohi, *cuts})
                if lo < olo:
                    nxt.append((lo, olo))
                for a, b in zip(pts[:-1], pts[1:]):
                    if b - a < tol:
                        continue
                    m = 0.5 * (a + b)
                    w_val = sigma + math.hypot(m - px, py)
                    o_val = s2 + math.hypot(m - p2, q2)
                    if not o_val <= w_val + margin:
                        nxt.append((a, b))
                if ohi < hi:
                    nxt.append((ohi, hi))
            segments = nxt
        return segments

    def _insert(self, w):
        """Clip a candidate window against the proven field, keep what improves."""
        geo = self.geo
        eid = w.edge
        L = geo.e_len[eid]
        tol = self._tol
        if w.b1 - w.b0 < tol:
            return
        # endpoint relaxations: pseudosource to interval end, then walk the edge
        self._relax(geo.e_v0[eid], w.sigma + math.hypot(w.b0 - w.px, w.py) + w.b0)
        self._relax(geo.e_v1[eid],
                    w.sigma + math.hypot(w.b1 - w.px, w.py) + (L - w.b1))

        doms = self._dominators(eid)
        pieces = [(a, b)
                  for a, b in self._clip_segments(w.px, w.py, w.sigma,
                                                  w.b0, w.b1, doms, strict=False)
                  if b - a >= tol]
        if not pieces:
            return
        self._trim_existing(eid, [(w.px, w.py, w.sigma, a, b) for a, b in pieces])
        propagatable = w.slot >= 0 and geo.e_face[eid, w.slot] != -1
        for a, b in pieces:
            merged = self._merge_same_source(eid, w, a, b)
            if merged is None:
                wn = Window(a, b, w.px, w.py, w.sigma, eid, w.slot)
                self.edge_windows[eid].append(wn)
                if propagatable:
                    self._push_window(wn)
            elif propagatable and merged.b1 - merged.b0 >= tol:
                self._push_window(merged)
        if len(self.edge_windows[eid]) >= 6:
            self._sweep_redundant(eid)

    def _sweep_redundant(self, eid):
        """Drop narrow windows some wider window absorbs.

        Clipping decisions inside value-tie zones are float-noise driven
        and can leave micro-sliver staircases behind; each sliver then
        propagates children, so lists grow with mesh size. A sliver is
        removed only when a wider window holds the re-emission relation
        over its span (pointwise at or below it, same continuation), so
        genuine cut-locus ties survive.
        """
        geo = self.geo
        L = geo.e_len[eid]
        tol = self._tol
        live = self.edge_windows[eid]
        changed = False
        for o in live:
            width = o.b1 - o.b0
            if width >= 1e-6 * L or width < tol:
                continue
            absorbed = False
            for other in live:
                if other is o or other.b1 - other.b0 <= width:
                    continue
                if not (other.b0 <= o.b0 + tol and o.b1 - tol <= other.b1):
                    continue
                dp = math.hypot(o.px - other.px, o.py - other.py)
                if abs(other.sigma + dp - o.sigma) <= 2.0 * tol:
                    absorbed = True
                    break
            if absorbed:
                o.b0, o.b1 = o.b0, o.b0  # zero width: dead to queries and pops
                changed = True
        if changed:
            self.edge_windows[eid] = [o for o in live if o.b1 - o.b0 >= tol]

    def _merge_same_source(self, eid, w, a, b):
        """Absorb [a,b] into an adjacent stored window of the same source.

        Wavefronts reach an edge through several faces as abutting
        fragments of one window; re-unifying them keeps one window per
        arrival instead of one per route. Returns the extended window, or
        None when nothing matched.
        """
        tol = self._tol
        host = None
        for o in self.edge_windows[eid]:
            if (o.slot == w.slot and abs(o.px - w.px) <= tol
                    and abs(o.py - w.py) <= tol and abs(o.sigma - w.sigma) <= tol
                    and a - tol <= o.b1 and o.b0 <= b + tol):
                if host is None:
                    o.b0, o.b1 = min(o.b0, a), max(o.b1, b)
                    host = o
                else:
                    # chained: the extension bridged two fragments
                    host.b0 = min(host.b0, o.b0)
                    host.b1 = max(host.b1, o.b1)
                    o.b0, o.b1 = o.b0, o.b0  # emptied, skipped at pop
        if host is not None:
            self.edge_windows[eid] = [o for o in self.edge_windows[eid]
                                      if o.b1 - o.b0 >= tol]
        return host

    def _trim_existing(self, eid, doms):
        """Cut stored windows back where fresh spans (px,py,sigma,lo,hi) win.

        Surviving fragments reuse the original object, so pending heap
        entries propagate just the trimmed span.
        """
        kept = []
        for o in self.edge_windows[eid]:
            segs = [(a, b)
                    for a, b in self._clip_segments(o.px, o.py, o.sigma,
                                                    o.b0, o.b1, doms, strict=True)
                    if b - a >= self._tol]
            if not segs:
                o.b0, o.b1 = o.b0, o.b0  # zero width: pending pops skip it
                continue
            o.b0, o.b1 = segs[0]
            kept.append(o)
            for a, b in segs[1:]:
                extra = Window(a, b, o.px, o.py, o.sigma, eid, o.slot)
                kept.append(extra)
                if extra.slot >= 0 and self.geo.e_face[eid, extra.slot] != -1:
                    self._push_window(extra)
        self.edge_windows[eid] = kept

    def _propagate(self, w):
        geo = self.geo
        eid = w.edge
        fi = geo.e_face[eid, w.slot]
        if fi == -1:
            return
        L = geo.e_len[eid]
        px, py = w.px, w.py
        if py < self._tol and not (w.b0 < px < w.b1):
            return  # pseudosource grazes along the edge line: wedge has no area
        cx, cy = geo.e_unfold[eid][w.slot]
        cy = -cy  # unfold the next face opposite the pseudosource
        # wedge rays through the interval ends
        r0 = (w.b0 - px, -py)
        r1 = (w.b1 - px, -py)
        v0, v1 = geo.e_v0[eid], geo.e_v1[eid]
        vc = geo.e_opp[eid, w.slot]
        A = (0.0, 0.0)
        B = (L, 0.0)
        C = (cx, cy)
        for S0, S1, ua, ub in ((A, C, v0, vc), (C, B, vc, v1)):
            self._propagate_segment(w, r0, r1, S0, S1, ua, ub, fi)

    def _propagate_segment(self, w, r0, r1, S0, S1, ua, ub, from_face):
        geo = self.geo
        px, py = w.px, w.py
        dx, dy = S1[0] - S0[0], S1[1] - S0[1]
        # inside the wedge: cross(r0, X-P) >= 0 and cross(r1, X-P) <= 0
        a0 = r0[0] * (S0[1] - py) - r0[1] * (S0[0] - px)
        b0c = r0[0] * dy - r0[1] * dx
        a1 = r1[0] * (S0[1] - py) - r1[1] * (S0[0] - px)
        b1c = r1[0] * dy - r1[1] * dx
        lo, hi = 0.0, 1.0

        def clip(a, b, keep_ge):
            nonlocal lo, hi
            # keep t where a + b*t >= 0 (or <= 0)
            if abs(b) < 1e-300:
                if (a < 0 and keep_ge) or (a > 0 and not keep_ge):
                    lo, hi = 1.0, 0.0
                return
            r = -a / b
            if (b > 0) == keep_ge:
                lo = max(lo, r)
            else:
                hi = min(hi, r)

        clip(a0, b0c, True)
        clip(a1, b1c, False)
        seg_len = math.hypot(dx, dy)
        if seg_len < self._tol or hi - lo < self._tol / seg_len:
            return
        key = (ua, ub) if ua < ub else (ub, ua)
        eid = geo.edge_index[key]
        slot = 1 if geo.e_face[eid, 0] == from_face else 0
        # map interval and pseudosource into the child edge's canonical frame
        ex, ey = dx / seg_len, dy / seg_len
        qx, qy = px - S0[0], py - S0[1]
        su = qx * ex + qy * ey  # along-edge coordinate, from S0
        sv = abs(qx * ey - qy * ex)  # height, canonical side is positive
        if ua == geo.e_v0[eid]:
            nb0, nb1 = lo * seg_len, hi * seg_len
            npx = su
        else:
            nb0, nb1 = (1.0 - hi) * seg_len, (1.0 - lo) * seg_len
            npx = seg_len - su
        self._insert(Window(nb0, nb1, npx, sv, w.sigma, eid, slot))

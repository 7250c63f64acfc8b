"""Triangle-triangle intersection tests between two triangle sets.

Used to verify that a deformation cage stays clear of the face region it
is built around. Pairs are prefiltered by axis-aligned bounding boxes,
then decided by Moller's interval test. Grazing contact within tolerance
counts as an intersection, which is the conservative choice for a
clearance check.
"""

import numpy as np


def _interval(p, d):
    """Parameter range where a triangle meets the other triangle's plane.

    p are vertex projections onto the shared line axis, d the clamped
    signed distances to the plane (zeros mean on-plane). Valid whenever
    the signs are mixed or some d is zero; the range is the hull of the
    plane crossings and on-plane vertices.
    """
    ts = []
    for a in range(3):
        if d[a] == 0.0:
            ts.append(p[a])
            continue
        for b in range(3):
            if d[a] > 0.0 > d[b]:
                ts.append(p[a] + (p[b] - p[a]) * d[a] / (d[a] - d[b]))
    return min(ts), max(ts)


def _cross_2d(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _segments_cross_2d(a0, a1, b0, b1, eps):
    d1 = _cross_2d(b1 - b0, a0 - b0)
    d2 = _cross_2d(b1 - b0, a1 - b0)
    d3 = _cross_2d(a1 - a0, b0 - a0)
    d4 = _cross_2d(a1 - a0, b1 - a0)
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and \
            ((d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)):
        return True
    # touching or collinear cases: fall back to projection overlap
    for d, p, q0, q1 in ((d1, a0, b0, b1), (d2, a1, b0, b1),
                         (d3, b0, a0, a1), (d4, b1, a0, a1)):
        if abs(d) <= eps:
            axis = np.argmax(np.abs(q1 - q0))
            lo, hi = sorted((q0[axis], q1[axis]))
            if lo - eps <= p[axis] <= hi + eps:
                return True
    return False


def _point_in_triangle_2d(p, tri, eps):
    d0 = _cross_2d(tri[1] - tri[0], p - tri[0])
    d1 = _cross_2d(tri[2] - tri[1], p - tri[1])
    d2 = _cross_2d(tri[0] - tri[2], p - tri[2])
    has_neg = (d0 < -eps) or (d1 < -eps) or (d2 < -eps)
    has_pos = (d0 > eps) or (d1 > eps) or (d2 > eps)
    return not (has_neg and has_pos)


def _coplanar_overlap(v, u, normal, eps):
    axis = int(np.argmax(np.abs(normal)))
    cols = [c for c in range(3) if c != axis]
    a, b = v[:, cols], u[:, cols]
    for i in range(3):
        for j in range(3):
            if _segments_cross_2d(a[i], a[(i + 1) % 3],
                                  b[j], b[(j + 1) % 3], eps):
                return True
    return (_point_in_triangle_2d(a[0], b, eps)
            or _point_in_triangle_2d(b[0], a, eps))


def tri_tri_overlap(t1, t2, eps=1e-12, scale=None):
    """True if two 3D triangles intersect, touching contact included.

    eps is relative to scale (largest coordinate magnitude by default);
    vertices closer than that to the other triangle's plane are treated
    as lying on it. Degenerate (zero-area) triangles never intersect.
    """
    v = np.asarray(t1, dtype=np.float64)
    u = np.asarray(t2, dtype=np.float64)
    if scale is None:
        scale = max(float(np.abs(v).max()), float(np.abs(u).max()), 1.0)
    tol = eps * scale

    n1 = np.cross(v[1] - v[0], v[2] - v[0])
    n2 = np.cross(u[1] - u[0], u[2] - u[0])
    l1, l2 = float(np.linalg.norm(n1)), float(np.linalg.norm(n2))
    if l1 <= tol * scale or l2 <= tol * scale:
        return False

    du = (u - v[0]) @ n1 / l1
    du[np.abs(du) < tol] = 0.0
    if np.all(du > 0.0) or np.all(du < 0.0):
        return False
    dv = (v - u[0]) @ n2 / l2
    dv[np.abs(dv) < tol] = 0.0
    if np.all(dv > 0.0) or np.all(dv < 0.0):
        return False

    line = np.cross(n1, n2)
    if np.linalg.norm(line) <= 1e-9 * l1 * l2:
        # parallel planes that neither sign test separated: the triangles
        # are coplanar to within tolerance, so decide in the plane
        return _coplanar_overlap(v, u, n1, tol)

    axis = int(np.argmax(np.abs(line)))
    lo1, hi1 = _interval(v[:, axis], dv)
    lo2, hi2 = _interval(u[:, axis], du)
    return max(lo1, lo2) <= min(hi1, hi2) + tol


def intersecting_pairs(pa, ta, pb, tb, eps=1e-12, limit=None):
    """Index pairs (i, j) with triangle ta[i] intersecting tb[j].

    Bounding boxes prune the quadratic pair set in chunks to bound
    memory; survivors get the exact test. limit caps the result size
    when only existence or a diagnostic sample is needed.
    """
    pa = np.asarray(pa, dtype=np.float64)
    pb = np.asarray(pb, dtype=np.float64)
    ta = np.asarray(ta, dtype=np.int64).reshape(-1, 3)
    tb = np.asarray(tb, dtype=np.int64).reshape(-1, 3)
    if ta.size == 0 or tb.size == 0:
        return []
    corners_a = pa[ta]
    corners_b = pb[tb]
    lo_a, hi_a = corners_a.min(axis=1), corners_a.max(axis=1)
    lo_b, hi_b = corners_b.min(axis=1), corners_b.max(axis=1)
    scale = max(float(np.abs(pa).max()), float(np.abs(pb).max()), 1.0)
    pad = eps * scale

    out = []
    chunk = max(1, int(2_000_000 // max(1, len(tb))))
    for start in range(0, len(ta), chunk):
        stop = start + chunk
        near = (np.all(lo_a[start:stop, None, :] <= hi_b[None, :, :] + pad,
                       axis=2)
                & np.all(lo_b[None, :, :] <= hi_a[start:stop, None, :] + pad,
                         axis=2))
        for i, j in np.argwhere(near):
            if tri_tri_overlap(corners_a[start + i], corners_b[j],
                               eps=eps, scale=scale):
                out.append((int(start + i), int(j)))
                if limit is not None and len(out) >= limit:
                    return out
    return out

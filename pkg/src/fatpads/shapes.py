"""Procedural meshes: test fixtures and the demo head's building blocks."""

import numpy as np

from .mesh import TriMesh


def make_grid(nx=10, ny=10, spacing=1.0):
    """Flat z=0 grid of (nx+1)*(ny+1) vertices, 2*nx*ny triangles."""
    xs = np.arange(nx + 1) * spacing
    ys = np.arange(ny + 1) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pos = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
    tris = []
    for i in range(nx):
        for j in range(ny):
            v00 = i * (ny + 1) + j
            v01 = v00 + 1
            v10 = v00 + (ny + 1)
            v11 = v10 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return TriMesh(pos, np.array(tris))


def make_two_triangle_square():
    """Unit square split along the (1,0)-(0,1) diagonal.

    The (0,0) -> (1,1) geodesic crosses the diagonal edge through face
    interiors, so it separates exact solvers from edge-graph shortest paths.
    """
    pos = np.array([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    tris = np.array([[0, 1, 3], [1, 2, 3]])
    return TriMesh(pos, tris)


def make_tetrahedron(scale=1.0):
    pos = scale * np.array([[1.0, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]])
    tris = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriMesh(pos, tris)


def make_cube(scale=1.0, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center, dtype=np.float64)
    pos = c + scale * np.array(
        [
            [-1.0, -1, -1],
            [1, -1, -1],
            [1, 1, -1],
            [-1, 1, -1],
            [-1, -1, 1],
            [1, -1, 1],
            [1, 1, 1],
            [-1, 1, 1],
        ]
    )
    tris = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom (z=-1)
            [4, 5, 6], [4, 6, 7],  # top
            [0, 1, 5], [0, 5, 4],  # y=-1
            [2, 3, 7], [2, 7, 6],  # y=+1
            [1, 2, 6], [1, 6, 5],  # x=+1
            [3, 0, 4], [3, 4, 7],  # x=-1
        ]
    )
    return TriMesh(pos, tris)


def make_icosphere(subdivisions=3, radius=1.0):
    """Subdivided icosahedron projected to the sphere. Vertex counts: 12, 42, 162, 642, 2562, 10242."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts[0])
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    for _ in range(subdivisions):
        verts = list(verts)
        midpoint = {}

        def mid(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                m = verts[i] + verts[j]
                m = m / np.linalg.norm(m)
                midpoint[key] = len(verts)
                verts.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new_faces)
        verts = np.array(verts)
    return TriMesh(verts * radius, faces)


def make_disc(rings=40, radius=1.0, density=0.35):
    """Flat z=0 disc: concentric rings at radii (i/rings)*radius around a center vertex.

    Ring i carries about density*2*pi*i vertices, so triangles stay
    well-shaped while the rim lands exactly on the circle of the given radius.
    """
    ring_counts = [max(8, int(np.ceil(density * 2 * np.pi * i))) for i in range(1, rings + 1)]
    pos = [np.zeros(3)]
    ring_start = []
    for i, n in enumerate(ring_counts, start=1):
        r = radius * i / rings
        ring_start.append(len(pos))
        ang = 2 * np.pi * np.arange(n) / n
        for a in ang:
            pos.append(np.array([r * np.cos(a), r * np.sin(a), 0.0]))
    pos = np.array(pos)

    tris = []
    # center fan
    n0 = ring_counts[0]
    for k in range(n0):
        tris.append((0, ring_start[0] + k, ring_start[0] + (k + 1) % n0))
    # ring-to-ring strips (rings may have different counts: zig-zag by angle)
    for i in range(len(ring_counts) - 1):
        n_in, n_out = ring_counts[i], ring_counts[i + 1]
        s_in, s_out = ring_start[i], ring_start[i + 1]
        ai = 0
        ao = 0
        # walk both rings by increasing angle, always advancing the ring whose
        # next vertex comes first
        while ai < n_in or ao < n_out:
            ang_in_next = 2 * np.pi * (ai + 1) / n_in
            ang_out_next = 2 * np.pi * (ao + 1) / n_out
            if ao >= n_out or (ai < n_in and ang_in_next <= ang_out_next):
                tris.append((s_in + ai % n_in, s_out + ao % n_out, s_in + (ai + 1) % n_in))
                ai += 1
            else:
                tris.append((s_in + ai % n_in, s_out + ao % n_out, s_out + (ao + 1) % n_out))
                ao += 1
    return TriMesh(pos, np.array(tris))


def disc_rim_vertices(mesh, radius, tol=1e-9):
    r = np.linalg.norm(mesh.positions[:, :2], axis=1)
    return np.flatnonzero(np.abs(r - radius) < tol * max(radius, 1.0))


def make_fibonacci_sphere(count=500, radius=1.0):
    """Irregular sphere: Fibonacci-spiral points triangulated by their hull.

    Unlike the icosphere this has no symmetry to hide behind, which makes
    it the fixture of choice for comparing independent geodesic solvers.
    """
    from scipy.spatial import ConvexHull

    k = np.arange(count)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    z = 1.0 - 2.0 * (k + 0.5) / count
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    pos = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    hull = ConvexHull(pos)
    tris = hull.simplices.astype(np.int64)
    # orient every face outward (hull orientation is not guaranteed)
    a, b, c = pos[tris[:, 0]], pos[tris[:, 1]], pos[tris[:, 2]]
    outward = np.einsum("ij,ij->i", np.cross(b - a, c - a), (a + b + c) / 3.0)
    flip = outward < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return TriMesh(pos * radius, tris)

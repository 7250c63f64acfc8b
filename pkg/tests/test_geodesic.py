"""Exact geodesic solver properties, oracle agreement and caching."""

import numpy as np
import pytest

from fatpads import shapes
from fatpads.geodesic import (
    GeodesicField,
    oracle_refined_dijkstra,
    solve_from,
    solve_from_point,
)

# the solver trades sub-noise ties for termination; its accuracy promise
SOLVER_SLACK = 1e-8


def test_two_triangle_square_crosses_interior():
    m = shapes.make_two_triangle_square()
    f = solve_from(m, 0)
    # corner-to-corner runs straight across the diagonal edge
    assert f.distances[2] == pytest.approx(np.sqrt(2), abs=1e-12)
    # the edge-graph route can only walk the rim
    d = solve_from(m, 0, method="dijkstra")
    assert d.distances[2] == pytest.approx(2.0, abs=1e-12)


def test_flat_grid_matches_euclidean():
    g = shapes.make_grid(12, 12, 0.7)
    P = g.positions
    for src in (0, 90):
        f = solve_from(g, src)
        exact = np.linalg.norm(P - P[src], axis=1)
        assert np.abs(f.distances - exact).max() < 1e-6


def test_icosphere_antipodal_near_pi():
    s = shapes.make_icosphere(3, radius=1.0)
    f = solve_from(s, 0)
    anti = int(np.argmin(np.linalg.norm(s.positions + s.positions[0], axis=1)))
    assert f.distances[anti] == pytest.approx(np.pi, rel=0.01)


def test_sphere_scaling_is_linear():
    s1 = shapes.make_icosphere(2, radius=1.0)
    s3 = shapes.make_icosphere(2, radius=3.0)
    f1 = solve_from(s1, 7)
    f3 = solve_from(s3, 7)
    assert np.allclose(f3.distances, 3.0 * f1.distances, rtol=1e-7, atol=1e-9)


def test_symmetry_on_irregular_sphere():
    s = shapes.make_fibonacci_sphere(180)
    a, b = 11, 140
    fa = solve_from(s, a)
    fb = solve_from(s, b)
    assert fa.distances[b] == pytest.approx(fb.distances[a], abs=SOLVER_SLACK)


def test_triangle_inequality_and_lipschitz():
    s = shapes.make_fibonacci_sphere(150)
    f = solve_from(s, 0)
    d = f.distances
    # 1-Lipschitz along every edge
    for va, vb in s.unique_edges():
        L = np.linalg.norm(s.positions[va] - s.positions[vb])
        assert abs(d[va] - d[vb]) <= L + SOLVER_SLACK
    # never shorter than the chord
    chords = np.linalg.norm(s.positions - s.positions[0], axis=1)
    assert np.all(d >= chords - SOLVER_SLACK)


def test_exact_within_oracle_on_irregular_sphere():
    s = shapes.make_fibonacci_sphere(300)
    f = solve_from(s, 0)
    o = oracle_refined_dijkstra(s, 0, refinement=8)
    mask = f.distances > 0.2  # relative comparison needs distance to exist
    rel = (o.distances[mask] - f.distances[mask]) / f.distances[mask]
    # the refined graph only overestimates, and by little
    assert rel.min() > -1e-9
    assert rel.max() < 0.02


def test_oracle_refinement_zero_is_edge_graph():
    m = shapes.make_two_triangle_square()
    o = oracle_refined_dijkstra(m, 0, refinement=0)
    assert o.distances[2] == pytest.approx(2.0, abs=1e-12)


def test_edge_point_queries_flat():
    g = shapes.make_grid(8, 8, 1.0)
    P = g.positions
    f = solve_from(g, 0)
    rng = np.random.default_rng(11)
    edges = g.unique_edges()
    for ei in rng.choice(len(edges), size=40, replace=False):
        a, b = (int(v) for v in edges[ei])
        t = float(rng.uniform(0.1, 0.9))
        point = (1 - t) * P[a] + t * P[b]
        want = np.linalg.norm(point - P[0])
        assert f.distance_at_edge_point(a, b, t) == pytest.approx(want, abs=1e-7)


def test_edge_point_query_requires_edge():
    g = shapes.make_grid(3, 3, 1.0)
    f = solve_from(g, 0)
    with pytest.raises(ValueError):
        f.distance_at_edge_point(0, 15, 0.5)


def test_point_source_interior_edge_vertex():
    g = shapes.make_grid(9, 9, 1.0)
    P = g.positions
    tri = g.triangles[0]
    cases = [
        ((0.3, 0.3, 0.4), 0.3 * P[tri[0]] + 0.3 * P[tri[1]] + 0.4 * P[tri[2]]),
        ((0.5, 0.5, 0.0), 0.5 * P[tri[0]] + 0.5 * P[tri[1]]),
        ((1.0, 0.0, 0.0), P[tri[0]]),
    ]
    for bary, point in cases:
        f = solve_from_point(g, 0, bary)
        exact = np.linalg.norm(P - point, axis=1)
        assert np.abs(f.distances - exact).max() < 1e-6
        assert len(f.distances) == g.vertex_count


def test_point_source_validates_barycentric():
    g = shapes.make_grid(3, 3, 1.0)
    with pytest.raises(ValueError):
        solve_from_point(g, 0, (0.7, 0.7, -0.4))
    with pytest.raises(ValueError):
        solve_from_point(g, 0, (0.2, 0.2, 0.2))


def test_source_out_of_range():
    g = shapes.make_grid(3, 3, 1.0)
    with pytest.raises(ValueError):
        solve_from(g, 99)
    with pytest.raises(ValueError):
        solve_from(g, -1)


def test_unknown_method_rejected():
    g = shapes.make_grid(3, 3, 1.0)
    with pytest.raises(ValueError):
        solve_from(g, 0, method="fast")


def test_boundary_wraps_around_notch():
    # L-shaped flat sheet: the geodesic must bend around the notch corner
    g = shapes.make_grid(8, 8, 1.0)
    keep = []
    for tri in g.triangles:
        c = g.positions[tri].mean(axis=0)
        if not (c[0] > 4 and c[1] > 4):
            keep.append(tri)
    m_ = g.with_positions(g.positions)
    from fatpads.mesh import TriMesh

    m = TriMesh(g.positions, np.array(keep))
    src = int(np.argmin(np.linalg.norm(g.positions - [8, 3, 0], axis=1)))
    dst = int(np.argmin(np.linalg.norm(g.positions - [3, 8, 0], axis=1)))
    f = solve_from(m, src)
    # bend at the notch corner (4,4): two straight legs
    corner = np.array([4.0, 4, 0])
    want = (np.linalg.norm(g.positions[src] - corner)
            + np.linalg.norm(g.positions[dst] - corner))
    assert f.distances[dst] == pytest.approx(want, abs=1e-6)
    # straight-line distance would be shorter: the notch really forced a bend
    assert want > np.linalg.norm(g.positions[src] - g.positions[dst]) + 0.5


def test_cache_roundtrip_and_invalidation(tmp_path):
    g = shapes.make_grid(6, 6, 1.0)
    f1 = solve_from(g, 3, cache_dir=tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    f2 = solve_from(g, 3, cache_dir=tmp_path)
    assert np.array_equal(f1.distances, f2.distances)
    # a different mesh must not hit the same entry
    g2 = g.with_positions(g.positions * 2.0)
    f3 = solve_from(g2, 3, cache_dir=tmp_path)
    assert not np.array_equal(f3.distances, f1.distances)


def test_cached_field_edge_queries_match_fresh(tmp_path):
    # a cache hit restores window queries by re-solving lazily
    g = shapes.make_grid(6, 6, 1.0)
    fresh = solve_from(g, 3, cache_dir=tmp_path)
    cached = solve_from(g, 3, cache_dir=tmp_path)
    assert cached._solver is None
    for a, b in ((3, 4), (20, 27), (15, 22)):
        for t in (0.2, 0.5, 0.8):
            assert cached.distance_at_edge_point(a, b, t) == pytest.approx(
                fresh.distance_at_edge_point(a, b, t), abs=1e-12)
    assert cached._solver is not None


def test_cache_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("FATPAD_CACHE_DIR", str(tmp_path))
    g = shapes.make_grid(4, 4, 1.0)
    solve_from(g, 0)
    assert len(list(tmp_path.iterdir())) == 1


def test_field_is_readonly():
    g = shapes.make_grid(3, 3, 1.0)
    f = solve_from(g, 0)
    assert isinstance(f, GeodesicField)
    with pytest.raises(ValueError):
        f.distances[0] = 1.0

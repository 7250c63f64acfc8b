"""Pad map validation, border loops, and same-topology transfer."""

import numpy as np
import pytest

from fatpads import shapes
from fatpads.padmap import (FatPadMap, PadMapError, border_vertices, load_map,
                            pad_border_loops, save_map, transfer_map)


def grid_block(nx, ny, i0, i1, j0, j1):
    """Vertex ids of the [i0,i1] x [j0,j1] block of a make_grid mesh."""
    return [i * (ny + 1) + j for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)]


def block_map_doc(mesh, vertices, anchor, movable=(), region="upper", pad="cheek"):
    return {
        "fingerprint": mesh.fingerprint(),
        "pads": [{
            "id": pad,
            "region": region,
            "vertices": list(map(int, vertices)),
            "movable_border": list(map(int, movable)),
            "handles": [{"id": f"{pad}.h0", "anchor": int(anchor)}],
        }],
    }


def test_block_pad_loads_and_borders():
    mesh = shapes.make_grid(10, 10)
    verts = grid_block(10, 10, 2, 7, 2, 7)
    anchor = 4 * 11 + 4
    m = load_map(block_map_doc(mesh, verts, anchor), mesh)
    pad = m.pad("cheek")
    assert pad.region == "upper"
    assert len(pad.vertices) == 36
    border = border_vertices(mesh, pad.vertex_set)
    # 6x6 block: border is the outer ring of 20 vertices
    assert len(border) == 20
    assert anchor not in border
    loops = pad_border_loops(mesh, m, "cheek")
    assert len(loops) == 1
    assert sorted(loops[0]) == sorted(border)
    # ordered by adjacency: consecutive loop vertices are mesh neighbors
    loop = loops[0]
    for a, b in zip(loop, loop[1:] + loop[:1]):
        assert b in set(mesh.vertex_neighbors(a))


def test_overlapping_pads_are_legal():
    mesh = shapes.make_grid(10, 10)
    doc = {
        "fingerprint": mesh.fingerprint(),
        "pads": [
            {"id": "a", "region": "upper",
             "vertices": grid_block(10, 10, 1, 6, 1, 6),
             "movable_border": [],
             "handles": [{"id": "a.h", "anchor": 3 * 11 + 3}]},
            {"id": "b", "region": "upper",
             "vertices": grid_block(10, 10, 4, 9, 4, 9),
             "movable_border": [],
             "handles": [{"id": "b.h", "anchor": 7 * 11 + 7}]},
        ],
    }
    m = load_map(doc, mesh)
    shared = m.pad("a").vertex_set & m.pad("b").vertex_set
    assert len(shared) == 9


def test_movable_border_must_be_on_border():
    mesh = shapes.make_grid(10, 10)
    verts = grid_block(10, 10, 2, 7, 2, 7)
    interior = 4 * 11 + 5
    doc = block_map_doc(mesh, verts, 4 * 11 + 4, movable=[interior])
    with pytest.raises(PadMapError, match=f"cheek.*{interior}.*interior"):
        load_map(doc, mesh)


def test_movable_border_on_actual_border_is_ok():
    mesh = shapes.make_grid(10, 10)
    verts = grid_block(10, 10, 2, 7, 2, 7)
    rim = sorted(border_vertices(mesh, set(verts)))[:5]
    m = load_map(block_map_doc(mesh, verts, 4 * 11 + 4, movable=rim), mesh)
    assert m.pad("cheek").movable_border == frozenset(rim)


def test_anchor_on_border_rejected():
    mesh = shapes.make_grid(10, 10)
    verts = grid_block(10, 10, 2, 7, 2, 7)
    edge_anchor = 2 * 11 + 4
    with pytest.raises(PadMapError, match="strictly interior"):
        load_map(block_map_doc(mesh, verts, edge_anchor), mesh)


def test_anchor_outside_pad_rejected():
    mesh = shapes.make_grid(10, 10)
    verts = grid_block(10, 10, 2, 7, 2, 7)
    with pytest.raises(PadMapError, match="not in pad"):
        load_map(block_map_doc(mesh, verts, 0), mesh)


def test_duplicate_ids_rejected():
    mesh = shapes.make_grid(6, 6)
    verts = grid_block(6, 6, 1, 5, 1, 5)
    doc = block_map_doc(mesh, verts, 3 * 7 + 3)
    doc["pads"].append(dict(doc["pads"][0]))
    with pytest.raises(PadMapError, match="duplicate pad id"):
        load_map(doc, mesh)
    doc["pads"][1] = dict(doc["pads"][1], id="other")
    with pytest.raises(PadMapError, match="duplicate handle id"):
        load_map(doc, mesh)


def test_vertex_out_of_range_rejected():
    mesh = shapes.make_grid(6, 6)
    verts = grid_block(6, 6, 1, 5, 1, 5) + [10_000]
    with pytest.raises(PadMapError, match="out of range"):
        load_map(block_map_doc(mesh, verts, 3 * 7 + 3), mesh)


def test_bad_region_rejected():
    mesh = shapes.make_grid(6, 6)
    verts = grid_block(6, 6, 1, 5, 1, 5)
    doc = block_map_doc(mesh, verts, 3 * 7 + 3, region="sideways")
    with pytest.raises(PadMapError, match="region"):
        load_map(doc, mesh)


def test_fingerprint_mismatch_rejected():
    mesh = shapes.make_grid(6, 6)
    other = shapes.make_grid(7, 7)
    verts = grid_block(6, 6, 1, 5, 1, 5)
    doc = block_map_doc(mesh, verts, 3 * 7 + 3)
    with pytest.raises(PadMapError, match="fingerprint"):
        load_map(doc, other)


def test_annulus_pad_has_two_loops():
    mesh = shapes.make_grid(12, 12)
    outer = set(grid_block(12, 12, 2, 10, 2, 10))
    hole = set(grid_block(12, 12, 5, 7, 5, 7))
    verts = sorted(outer - hole)
    doc = block_map_doc(mesh, verts, 3 * 13 + 3)
    m = load_map(doc, mesh)
    loops = pad_border_loops(mesh, m, "cheek")
    assert len(loops) == 2
    covered = sorted(v for loop in loops for v in loop)
    assert covered == sorted(border_vertices(mesh, set(verts)))


def test_whole_sphere_pad_has_no_loops():
    mesh = shapes.make_icosphere(1)
    doc = {
        "fingerprint": mesh.fingerprint(),
        "pads": [{"id": "all", "region": "upper",
                  "vertices": list(range(mesh.vertex_count)),
                  "movable_border": [],
                  "handles": [{"id": "h", "anchor": 0}]}],
    }
    m = load_map(doc, mesh)
    assert pad_border_loops(mesh, m, "all") == []


def test_bowtie_border_rejected():
    # two blocks sharing exactly one corner vertex: border degree 4 there
    # (anti-diagonal placement so the grid cell diagonals cannot bridge them)
    mesh = shapes.make_grid(10, 10)
    pinch = 5 * 11 + 5
    verts = sorted(set(grid_block(10, 10, 2, 5, 5, 8))
                   | set(grid_block(10, 10, 5, 8, 2, 5)))
    doc = block_map_doc(mesh, verts, 3 * 11 + 6)
    m = load_map(doc, mesh)
    with pytest.raises(PadMapError, match=f"non-manifold.*{pinch}"):
        pad_border_loops(mesh, m, "cheek")


def test_transfer_rebinds_rest_positions():
    mesh = shapes.make_grid(8, 8)
    verts = grid_block(8, 8, 2, 6, 2, 6)
    anchor = 4 * 9 + 4
    m = load_map(block_map_doc(mesh, verts, anchor), mesh)

    rng = np.random.default_rng(11)
    moved = mesh.positions + 0.05 * rng.standard_normal(mesh.positions.shape)
    target = mesh.with_positions(moved)
    m2 = transfer_map(m, target)
    assert np.array_equal(m2.pad("cheek").vertices, m.pad("cheek").vertices)
    np.testing.assert_allclose(m2.handle("cheek.h0").rest_position,
                               moved[anchor])
    # identity transfer is idempotent
    m3 = transfer_map(m2, target)
    np.testing.assert_array_equal(m3.handle("cheek.h0").rest_position,
                                  m2.handle("cheek.h0").rest_position)


def test_transfer_to_different_topology_fails():
    mesh = shapes.make_grid(8, 8)
    verts = grid_block(8, 8, 2, 6, 2, 6)
    m = load_map(block_map_doc(mesh, verts, 4 * 9 + 4), mesh)
    with pytest.raises(PadMapError, match="connectivity differs"):
        transfer_map(m, shapes.make_grid(9, 8))


def test_save_load_roundtrip_and_hash_stability():
    mesh = shapes.make_grid(8, 8)
    verts = grid_block(8, 8, 2, 6, 2, 6)
    rim = sorted(border_vertices(mesh, set(verts)))[:4]
    m = load_map(block_map_doc(mesh, verts, 4 * 9 + 4, movable=rim), mesh)
    blob = save_map(m)
    m2 = load_map(blob, mesh)
    assert save_map(m2) == blob
    assert m2.content_hash() == m.content_hash()
    assert m2.pad("cheek").movable_border == m.pad("cheek").movable_border


def test_unknown_ids_raise():
    mesh = shapes.make_grid(6, 6)
    verts = grid_block(6, 6, 1, 5, 1, 5)
    m = load_map(block_map_doc(mesh, verts, 3 * 7 + 3), mesh)
    with pytest.raises(PadMapError, match="unknown pad"):
        m.pad("nope")
    with pytest.raises(PadMapError, match="unknown handle"):
        m.handle("nope")

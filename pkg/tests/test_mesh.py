import numpy as np
import pytest

from febe import mesh as meshmod
from febe.mesh import (MeshError, edge_sets, load_mesh, mesh_size, refine,
                       refine_uniform, save_mesh, shape_regularity)

from conftest import square_mesh_text, struct_square


def test_load_unit_square(unit_square):
    m = unit_square
    assert len(m.vertices) == 4
    assert len(m.triangles) == 2
    assert len(m.boundary_edges) == 4
    assert m.boundary_labels.count("T") == 4


def test_left_edge_slip_label():
    m = load_mesh(square_mesh_text(left_label="S"))
    assert m.boundary_labels.count("S") == 1


def test_vertex_index_out_of_range():
    bad = square_mesh_text().replace("0 2 3", "0 2 9")
    with pytest.raises(MeshError):
        load_mesh(bad)


def test_unlabeled_boundary_edge_rejected():
    lines = square_mesh_text().split("\n")
    lines[0] = "4 2 3"
    with pytest.raises(MeshError, match="unlabeled"):
        load_mesh("\n".join(lines[:-1]))


def test_empty_transmission_rejected():
    txt = square_mesh_text(all_labels="S")
    with pytest.raises(MeshError, match="transmission"):
        load_mesh(txt)


def test_scaling_applied_for_large_domains():
    m = load_mesh(square_mesh_text(lo=0.0, hi=3.0))
    assert m.scale_factor < 1.0
    loop, _ = m.boundary_loop()
    pts = m.vertices[loop]
    d2 = np.sum((pts[:, None] - pts[None, :]) ** 2, axis=2)
    assert np.sqrt(d2.max()) < 1.0
    assert load_mesh(square_mesh_text(), scale=False).scale_factor == 1.0


def test_mesh_size_diagonal(unit_square):
    h, h_T, h_E = mesh_size(unit_square)
    assert h == pytest.approx(np.sqrt(2.0))
    assert h == pytest.approx(max(h_T))
    assert max(h_E.values()) == pytest.approx(np.sqrt(2.0))


def test_mesh_size_halves_under_two_sweeps(unit_square):
    m2 = refine_uniform(unit_square, 2)
    h0 = mesh_size(unit_square)[0]
    h2 = mesh_size(m2)[0]
    assert h2 == pytest.approx(h0 / 2)


def test_refine_empty_is_identity(unit_square):
    m = refine(unit_square, set())
    assert m is unit_square


def test_refine_single_triangle_conforming(unit_square):
    m = refine(unit_square, {0})
    assert len(m.triangles) >= 3
    _assert_conforming(m)


def test_uniform_refinement_doubles_count(unit_square):
    m = unit_square
    for k in range(1, 4):
        m = refine(m, range(len(m.triangles)))
        assert len(m.triangles) == 2 * 2 ** k
        _assert_conforming(m)


def test_invalid_mark_id(unit_square):
    with pytest.raises(MeshError):
        refine(unit_square, {99})


def test_boundary_labels_inherited():
    m = load_mesh(square_mesh_text(left_label="S"), scale=False)
    m = refine_uniform(m, 3)
    length_S = 0.0
    for (a, b), lab in zip(m.boundary_edges, m.boundary_labels):
        if lab == "S":
            length_S += np.linalg.norm(m.vertices[a] - m.vertices[b])
    assert length_S == pytest.approx(1.0)


def test_boundary_length_preserved(unit_square):
    def blen(m):
        return sum(np.linalg.norm(m.vertices[a] - m.vertices[b])
                   for a, b in m.boundary_edges)
    m = refine_uniform(unit_square, 3)
    assert blen(m) == pytest.approx(blen(unit_square))


def test_shape_regularity_bounded(unit_square):
    rng = np.random.default_rng(7)
    bound0 = shape_regularity(unit_square)
    m = unit_square
    for _ in range(6):
        nmark = max(1, len(m.triangles) // 3)
        marked = rng.choice(len(m.triangles), size=nmark, replace=False)
        m = refine(m, marked)
        assert shape_regularity(m) <= 4.0 * bound0
    _assert_conforming(m)


def test_generation_tracking(unit_square):
    m = refine_uniform(unit_square, 2)
    assert m.generation.max() == 2
    assert m.generation.min() >= 1


def test_edge_sets(unit_square):
    interior, boundary = edge_sets(unit_square)
    assert len(interior) == 1
    assert len(boundary) == 4
    assert all(L > 0 for *_, L in boundary)


def test_save_load_roundtrip():
    m = refine_uniform(load_mesh(struct_square(2, slip=("b",))), 1)
    m2 = load_mesh(save_mesh(m))
    assert len(m2.triangles) == len(m.triangles)
    assert sorted(m2.boundary_labels) == sorted(m.boundary_labels)


def test_nonconforming_rejected():
    # two triangles overlapping on a partial edge -> hanging node
    txt = "\n".join(["5 2 6",
                     "0 0", "1 0", "0 1", "2 0", "1 1",
                     "0 1 2", "1 3 4",
                     "0 1 T", "1 3 T", "3 4 T", "4 1 T", "1 2 T", "2 0 T"])
    with pytest.raises(MeshError):
        load_mesh(txt)


def _assert_conforming(m):
    counts = {}
    for tri in m.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            counts[(min(a, b), max(a, b))] = counts.get((min(a, b), max(a, b)), 0) + 1
    assert all(c <= 2 for c in counts.values())
    m._check_hanging(counts.keys())

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glidergen import mesh as M
from oracles import point_triangle_distance_qp, point_triangle_distance_sampled, winding_number


def _rotation(seed):
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((3, 3)))
    return q * np.sign(np.linalg.det(q))


# --- I/O ---------------------------------------------------------------------

def test_load_single_triangle(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = M.load_mesh(p)
    assert m.n_triangles == 1 and m.n_vertices == 3


def test_load_quad_is_fan_split(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n")
    m = M.load_mesh(p)
    assert m.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_and_stl_round_trip(tmp_path):
    cube = M.box_mesh()
    assert cube.n_triangles == 12
    M.save_obj(cube, tmp_path / "c.obj")
    M.save_binary_stl(cube, tmp_path / "c.stl")
    a = M.load_mesh(tmp_path / "c.obj")
    b = M.load_mesh(tmp_path / "c.stl")
    assert np.array_equal(a.vertices, cube.vertices)
    assert b.n_triangles == 12 and b.n_vertices == 8
    assert M.enclosed_volume(b) == pytest.approx(1.0)


@pytest.mark.parametrize("text", ["", "v 0 0 0\n", "v 0 0\nf 1 2 3\n", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"])
def test_bad_obj_rejected(tmp_path, text):
    p = tmp_path / "bad.obj"
    p.write_text(text)
    with pytest.raises(M.MeshError):
        M.load_mesh(p)


def test_truncated_stl_rejected(tmp_path):
    p = tmp_path / "bad.stl"
    p.write_bytes(b"x" * 80 + (5).to_bytes(4, "little") + b"\0" * 10)
    with pytest.raises(M.MeshError):
        M.load_mesh(p)


# --- cleaning and alignment --------------------------------------------------

def test_clean_drops_floating_triangle():
    cube = M.box_mesh()
    far = M.TriangleMesh([[10, 10, 10], [11, 10, 10], [10, 11, 10]], [[0, 1, 2]])
    both = M.TriangleMesh(np.vstack([cube.vertices, far.vertices]),
                          np.vstack([cube.triangles, far.triangles + 8]))
    out = M.clean_mesh(both)
    assert out.n_triangles == 12 and M.is_watertight(out)


def test_clean_keeps_larger_area_cube():
    small = M.box_mesh(center=(0, 0, 0))
    big = M.box_mesh(size=(2, 2, 2), center=(5, 0, 0))
    both = M.TriangleMesh(np.vstack([small.vertices, big.vertices]),
                          np.vstack([small.triangles, big.triangles + 8]))
    out = M.clean_mesh(both)
    assert out.surface_area() == pytest.approx(24.0)


def test_clean_is_idempotent_and_keeps_sphere():
    s = M.icosphere(0.5, 2)
    once = M.clean_mesh(s)
    twice = M.clean_mesh(once)
    assert np.array_equal(once.vertices, s.vertices) and np.array_equal(once.triangles, s.triangles)
    assert np.array_equal(twice.vertices, once.vertices) and np.array_equal(twice.triangles, once.triangles)


def test_clean_all_degenerate_raises():
    m = M.TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    with pytest.raises(M.MeshError):
        M.clean_mesh(m)


def test_align_long_z_fuselage():
    # 2 m along z, 0.4 along x, 0.2 along y
    m = M.box_mesh(size=(0.4, 0.2, 2.0), center=(3, -1, 2))
    out = M.align_mesh(m)
    ext = out.bounds().extent
    assert ext[0] == pytest.approx(1.0, abs=1e-9)
    assert ext[1] == pytest.approx(0.1, abs=1e-9)   # smallest -> up
    assert ext[2] == pytest.approx(0.2, abs=1e-9)   # middle -> span
    assert np.allclose(out.bounds().center, 0, atol=1e-9)


def test_align_principal_axis_matches_eigensolver():
    rng = np.random.default_rng(3)
    m = M.box_mesh(size=(2.0, 0.5, 1.0)).transformed(rotation=_rotation(4))
    m = M.TriangleMesh(m.vertices + 0.01 * rng.standard_normal(m.vertices.shape), m.triangles)
    out = M.align_mesh(m)
    R = np.array(out.meta["alignment"]["rotation"])
    v = m.vertices - m.vertices.mean(axis=0)
    w, U = np.linalg.eig(v.T @ v)  # general solver, not eigh
    major = np.real(U[:, np.argmax(np.real(w))])
    assert abs(abs(R[0] @ major) - 1.0) < 1e-9
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_align_fixed_point_and_translation():
    m = M.box_mesh(size=(1.0, 0.3, 0.6))
    assert np.allclose(M.align_mesh(m).vertices, m.vertices, atol=1e-9)
    shifted = m.transformed(translation=(5, 5, 5))
    assert np.allclose(M.align_mesh(shifted).vertices, m.vertices, atol=1e-9)


def test_align_degenerate_falls_back():
    flat = M.TriangleMesh([[0, 0, 0], [2, 0, 0], [0, 1, 0], [2, 1, 0]], [[0, 1, 2], [1, 3, 2]])
    out = M.align_mesh(flat)
    assert out.meta["alignment"]["degenerate"]
    assert out.bounds().extent.max() == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_align_normalizes_box(seed, scale):
    m = M.icosphere(1.0, 1).transformed(rotation=_rotation(seed), scale=scale,
                                        translation=np.random.default_rng(seed).uniform(-3, 3, 3))
    out = M.align_mesh(m)
    box = out.bounds()
    assert box.extent.max() == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(box.center, 0.0, atol=1e-9)


# --- distances ---------------------------------------------------------------

def test_cube_center_distance():
    assert M.nearest_surface_distance(M.box_mesh(), (0, 0, 0)) == pytest.approx(0.5)


def test_vertex_distance_is_zero():
    s = M.icosphere(0.5, 2)
    assert M.nearest_surface_distance(s, s.vertices[7]) == 0.0


def test_distance_matches_independent_oracle():
    rng = np.random.default_rng(0)
    s = M.icosphere(0.4, 1).transformed(rotation=_rotation(1))
    pts = rng.uniform(-0.8, 0.8, (60, 3))
    got = M.surface_distances(s, pts)
    C = s.corners()
    want = np.array([min(point_triangle_distance_qp(p, *c) for c in C) for p in pts])
    assert np.max(np.abs(got - want)) < 1e-12
    # dense sampling is an upper bound that converges from above
    for p, g in zip(pts[:5], got[:5]):
        dense = min(point_triangle_distance_sampled(p, *c, n=60) for c in C)
        assert g <= dense + 1e-12 and dense - g < 0.01


def test_index_equals_bruteforce_bitwise():
    rng = np.random.default_rng(1)
    s = M.icosphere(0.3, 2)
    pts = rng.uniform(-0.6, 0.6, (500, 3))
    assert np.array_equal(M.surface_distances(s, pts), M.surface_distances_bruteforce(s, pts))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_distance_is_1_lipschitz(xs):
    s = M.icosphere(0.4, 1)
    p, q = np.array(xs[:3]), np.array(xs[3:])
    d = M.surface_distances(s, np.stack([p, q]))
    assert abs(d[0] - d[1]) <= np.linalg.norm(p - q) + 1e-12


# --- inside test -------------------------------------------------------------

def test_cube_inside_outside():
    cube = M.box_mesh()
    assert M.point_inside(cube, (0, 0, 0))
    assert not M.point_inside(cube, (2, 0, 0))


def test_inside_agrees_with_winding_number():
    rng = np.random.default_rng(2)
    mesh = M.clean_mesh(M.TriangleMesh(
        np.vstack([M.icosphere(0.3, 2).vertices, M.box_mesh(size=(0.6, 0.2, 0.2), center=(0.35, 0, 0)).vertices]),
        np.vstack([M.icosphere(0.3, 2).triangles]),
    ))
    pts = rng.uniform(-0.5, 0.5, (1000, 3))
    got = M.points_inside(mesh, pts)
    want = winding_number(mesh.vertices, mesh.triangles, pts) > 0.5
    assert np.array_equal(got, want)


def test_inside_agrees_with_winding_number_nonconvex():
    from glidergen import synth
    m = M.clean_mesh(synth.glider_mesh(synth.GliderParams(), resolution=21))
    rng = np.random.default_rng(5)
    box = m.bounds()
    pts = rng.uniform(box.min, box.max, (1000, 3))
    got = M.points_inside(m, pts)
    want = winding_number(m.vertices, m.triangles, pts) > 0.5
    assert np.array_equal(got, want)


def test_inside_on_open_mesh_warns():
    cube = M.box_mesh()
    open_box = M.TriangleMesh(cube.vertices, cube.triangles[:-1])
    with pytest.warns(M.WatertightWarning):
        M.point_inside(open_box, (0, 0, 0))


def test_inside_ray_through_vertex_is_retried():
    # the query sits exactly below a vertex of an octahedron-like fan: many
    # rays graze edges, the result must still be correct
    cube = M.box_mesh()
    pts = np.array([[0.0, 0.0, 0.0], [0.25, 0.25, 0.25], [0.5 - 1e-12, 0, 0]])
    assert M.points_inside(cube, pts, seed=3).all()


# --- integral quantities -----------------------------------------------------

def test_projection_areas_cube_and_plate():
    f, t = M.projection_areas(M.box_mesh())
    cell = 1.0 / 256
    assert abs(f - 1.0) <= 2 * cell and abs(t - 1.0) <= 2 * cell
    f, t = M.projection_areas(M.box_mesh(size=(1.0, 0.01, 1.0)))
    assert t == pytest.approx(1.0, abs=0.01)
    assert f == pytest.approx(0.01, rel=0.02)


def test_projection_areas_sphere():
    f, t = M.projection_areas(M.icosphere(0.5, 4))
    assert f == pytest.approx(math.pi * 0.25, rel=0.01)
    assert t == pytest.approx(math.pi * 0.25, rel=0.01)


def test_volume_cube_sphere_inverted():
    assert M.enclosed_volume(M.box_mesh()) == pytest.approx(1.0)
    s = M.icosphere(0.5, 4)
    assert M.enclosed_volume(s) == pytest.approx(4 / 3 * math.pi * 0.125, rel=0.01)
    assert M.enclosed_volume(s.flipped()) == pytest.approx(M.enclosed_volume(s), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_volume_rotation_invariant(seed):
    s = M.box_mesh(size=(1.0, 0.3, 0.7))
    v0 = M.enclosed_volume(s)
    v1 = M.enclosed_volume(s.transformed(rotation=_rotation(seed)))
    assert abs(v1 - v0) <= 1e-9 * v0


def test_empty_mesh_errors():
    empty = M.TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
    with pytest.raises(M.MeshError):
        M.projection_areas(empty)
    with pytest.raises(M.MeshError):
        M.nearest_surface_distance(empty, (0, 0, 0))
    with pytest.raises(M.MeshError):
        M.clean_mesh(empty)


def test_open_volume_warns_but_returns():
    cube = M.box_mesh()
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        M.enclosed_volume(M.TriangleMesh(cube.vertices, cube.triangles[:-2]))
    assert any(issubclass(w.category, M.WatertightWarning) for w in rec)

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warpdiff.autodiff import compile_warp
from warpdiff.eval import Env, ad_jacobian, eval_graph, tangent_collapse
from warpdiff.mesh import (
    Mesh,
    MeshError,
    cube_mesh,
    load_obj,
    sphere_with_vertices,
    tangent_frame,
    uv_sphere,
    warp_mesh,
    warp_vertex,
    write_obj,
)

from conftest import load_warp

ROT_Z = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def check_frame(n, frame, tol=1e-9):
    u, v = frame.u, frame.v
    assert abs(np.linalg.norm(u) - 1) <= tol and abs(np.linalg.norm(v) - 1) <= tol
    assert abs(u @ n) <= tol and abs(v @ n) <= tol
    assert np.max(np.abs(np.cross(u, v) - n)) <= tol


def test_tangent_frame_z():
    f = tangent_frame([0.0, 0.0, 1.0])
    np.testing.assert_array_equal(f.v, [0.0, -1.0, 0.0])
    np.testing.assert_array_equal(f.u, [-1.0, 0.0, 0.0])
    np.testing.assert_array_equal(np.cross(f.u, f.v), [0.0, 0.0, 1.0])


def test_tangent_frame_x_special_case():
    f = tangent_frame([1.0, 0.0, 0.0])
    np.testing.assert_array_equal(f.v, [0.0, 0.0, -1.0])
    np.testing.assert_array_equal(f.u, [0.0, -1.0, 0.0])
    np.testing.assert_array_equal(np.cross(f.u, f.v), [1.0, 0.0, 0.0])


def test_tangent_frame_diagonal():
    n = np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0)
    check_frame(n, tangent_frame(n))


@pytest.mark.parametrize("n", [[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.00001]])
def test_tangent_frame_rejects_non_unit(n):
    with pytest.raises(MeshError):
        tangent_frame(n)


@pytest.mark.parametrize("n", [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1], [1, 1e-7, -1e-7]])
def test_tangent_frame_axes(n):
    n = np.asarray(n, dtype=float)
    n /= np.linalg.norm(n)
    check_frame(n, tangent_frame(n))


_unit = st.tuples(*[st.floats(-1, 1) for _ in range(3)]).filter(lambda t: np.linalg.norm(t) > 1e-3)


@settings(max_examples=300, deadline=None)
@given(_unit)
def test_tangent_frame_property(t):
    n = np.array(t) / np.linalg.norm(t)
    check_frame(n, tangent_frame(n))


def test_warp_vertex_identities():
    p = np.array([0.3, -1.0, 2.0])
    n = np.array([0.0, 0.6, 0.8])
    q, m = warp_vertex(p, n, np.zeros(3), np.zeros((3, 3)))
    np.testing.assert_array_equal(q, p)
    np.testing.assert_array_equal(m, n)
    k = np.array([1.0, 2.0, 3.0])
    q, m = warp_vertex(p, n, k, np.zeros((3, 3)))
    np.testing.assert_array_equal(q, p + k)
    np.testing.assert_array_equal(m, n)


def test_warp_vertex_flatten():
    J = np.diag([-1.0, 0.0, 0.0])
    _, m = warp_vertex(np.zeros(3), np.array([0.0, 0.0, 1.0]), np.zeros(3), J)
    np.testing.assert_array_equal(m, np.zeros(3))
    _, m = warp_vertex(np.zeros(3), np.array([1.0, 0.0, 0.0]), np.zeros(3), J)
    np.testing.assert_array_equal(m, [1.0, 0.0, 0.0])


def test_warp_vertex_rejects_bad_input():
    with pytest.raises(MeshError):
        warp_vertex(np.zeros(3), np.array([0.0, 0.0, 2.0]), np.zeros(3), np.zeros((3, 3)))
    with pytest.raises(MeshError):
        warp_vertex(np.zeros(3), np.array([0.0, 0.0, 1.0]), np.zeros(3), np.full((3, 3), np.nan))


def test_zero_warp_bit_equal():
    mesh = uv_sphere()
    out, summary = warp_mesh(mesh, compile_warp("vec3(0.0)"))
    assert np.array_equal(out.positions, mesh.positions)
    assert np.array_equal(out.normals, mesh.normals)
    assert np.array_equal(out.faces, mesh.faces)
    assert summary.degenerate_normals == 0 and summary.max_edge_growth == 1.0


def test_rotation_on_cube_and_sphere():
    rot = compile_warp("vec3(-position.y, position.x, position.z) - position")
    for mesh in (cube_mesh(), uv_sphere()):
        out, _ = warp_mesh(mesh, rot)
        np.testing.assert_allclose(out.normals, mesh.normals @ ROT_Z.T, rtol=0, atol=1e-9)
        np.testing.assert_allclose(out.positions, mesh.positions @ ROT_Z.T, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-np.pi, np.pi), _unit)
def test_rotation_equivariance_any_normal(angle, axis):
    k = np.array(axis) / np.linalg.norm(axis)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K
    rng = np.random.default_rng(0)
    for n in rng.normal(size=(5, 3)):
        n /= np.linalg.norm(n)
        _, m = warp_vertex(np.zeros(3), n, np.zeros(3), R - np.eye(3))
        np.testing.assert_allclose(m, R @ n, rtol=0, atol=1e-9)


@pytest.mark.parametrize("src", ["vec3(1.5, -2.0, 0.25)", "position", "position * 3.0", "position * -0.5"])
def test_translation_and_scale_keep_normals(src):
    mesh = uv_sphere()
    out, _ = warp_mesh(mesh, compile_warp(src))
    np.testing.assert_allclose(out.normals, mesh.normals, rtol=0, atol=1e-9)


def test_flatten_cube():
    cube = cube_mesh()
    out, summary = warp_mesh(cube, load_warp("flatten"))
    on_x = np.abs(cube.normals[:, 0]) == 1.0
    # +-y and +-z faces: both tangents lose their x part or collapse
    assert on_x.sum() == 8
    assert np.all(out.normals[~on_x] == 0.0)
    np.testing.assert_array_equal(out.normals[on_x], cube.normals[on_x])
    assert summary.degenerate_normals == 16
    assert np.all(out.positions[:, 0] == 0.0)


def test_degenerate_iff_tangent_map_collapses():
    warp = load_warp("flatten")
    mesh = uv_sphere(9, 12)
    out, summary = warp_mesh(mesh, warp)
    _, J = ad_jacobian(warp, Env(position=mesh.positions))
    for i, n in enumerate(mesh.normals):
        frame = tangent_frame(n)
        collapsed = tangent_collapse(J[i], frame.u, frame.v) < 1e-12
        assert collapsed == bool(summary.degenerate_mask[i]) == bool(np.all(out.normals[i] == 0))


def _surface_normal(warp, env, p, n, h=1e-4):
    f = tangent_frame(n)

    def w(q):
        return q + eval_graph(warp.graph, warp.offset, env.with_position(q))

    base = w(p)
    c = np.cross(w(p + h * f.u) - base, w(p + h * f.v) - base)
    return c / np.linalg.norm(c)


@pytest.mark.parametrize("name", ["sine_wave", "twist", "bulge", "genie"])
def test_normals_match_surface_tangents(name):
    warp = load_warp(name)
    rng = np.random.default_rng(11)
    env = Env(millis=2500.0, mouse=np.array([700.0, 400.0]))
    for _ in range(100):
        p = rng.uniform(-3, 3, 3)
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        f, J = ad_jacobian(warp, env.with_position(p))
        _, m = warp_vertex(p, n, f, J)
        ref = _surface_normal(warp, env, p, n)
        assert np.arccos(np.clip(m @ ref, -1, 1)) <= 1e-3


def test_world_mode_identity_matches_model():
    warp = load_warp("bulge")
    mesh = uv_sphere(8, 10)
    a, _ = warp_mesh(mesh, warp)
    b, _ = warp_mesh(mesh, warp, model_matrix=np.eye(4))
    np.testing.assert_allclose(b.positions, a.positions, atol=1e-12)
    np.testing.assert_allclose(b.normals, a.normals, atol=1e-12)


def test_world_mode_transforms_first():
    warp = load_warp("twist")
    env = Env(millis=1500.0)
    mesh = uv_sphere(8, 10)
    M = np.eye(4)
    M[:3, :3] = np.diag([2.0, 1.0, 0.5])
    M[:3, 3] = [1.0, 2.0, 3.0]
    world, _ = warp_mesh(mesh, warp, env, model_matrix=M)

    # oracle: move the mesh by hand, then warp in place
    L = M[:3, :3]
    normals = mesh.normals @ np.linalg.inv(L)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    moved = Mesh(mesh.positions @ L.T + M[:3, 3], normals, mesh.faces)
    expected, _ = warp_mesh(moved, warp, env)
    np.testing.assert_allclose(world.positions, expected.positions, atol=1e-12)
    np.testing.assert_allclose(world.normals, expected.normals, atol=1e-12)


def test_world_mode_singular_matrix():
    M = np.eye(4)
    M[2, 2] = 0.0
    with pytest.raises(MeshError, match="invertible"):
        warp_mesh(cube_mesh(), compile_warp("vec3(0.0)"), model_matrix=M)


def test_edge_growth_warning(caplog):
    stretch = compile_warp("vec3(position.x * 9.0, 0.0, 0.0)")
    with caplog.at_level(logging.WARNING):
        _, summary = warp_mesh(cube_mesh(), stretch)
    assert summary.long_edges > 0 and summary.max_edge_growth == pytest.approx(10.0)
    assert any("grew" in line for line in summary.lines())
    assert "edges grew" in caplog.text


def test_mesh_validation():
    with pytest.raises(MeshError):
        warp_mesh(Mesh(np.zeros((3, 3)), np.zeros((2, 3)), [[0, 1, 2]]), compile_warp("vec3(0.0)"))
    with pytest.raises(MeshError):
        Mesh(np.zeros((3, 3)), np.tile([0.0, 0.0, 1.0], (3, 1)), [[0, 1, 3]]).validate()
    with pytest.raises(MeshError):
        Mesh(np.zeros((3, 3)), np.zeros((3, 3)), [[0, 1, 2]]).validate()


def test_sphere_sizes():
    assert len(uv_sphere()) == 482
    s = uv_sphere()
    np.testing.assert_allclose(np.linalg.norm(s.normals, axis=1), 1.0)
    assert abs(len(sphere_with_vertices(14000)) - 14000) < 200


# OBJ -------------------------------------------------------------------------------

TRI = """v 0 0 0
v 1 0 0
v 0 1 0
vn 0 0 1
vn 0 0 1
vn 0 0 1
f 1//1 2//2 3//3
"""


def write(tmp_path, text, name="m.obj"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_triangle(tmp_path):
    mesh = load_obj(write(tmp_path, TRI))
    assert len(mesh) == 3 and mesh.faces.tolist() == [[0, 1, 2]]


def test_quad_fan(tmp_path):
    text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n"
    mesh = load_obj(write(tmp_path, text))
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_missing_normals(tmp_path):
    with pytest.raises(MeshError, match="mesh has no baked normals"):
        load_obj(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))


def test_face_without_normal_index(tmp_path):
    with pytest.raises(MeshError, match="line 7"):
        load_obj(write(tmp_path, TRI.replace("f 1//1 2//2 3//3", "f 1//1 2 3//3")))


@pytest.mark.parametrize(
    "bad, line",
    [("v 0 zero 0", 2), ("vn 0 0", 5), ("f 1//1 2//2", 7), ("f 1//1 2//2 9//3", 7), ("f 0//1 2//2 3//3", 7)],
)
def test_malformed_records_name_line(tmp_path, bad, line):
    lines = TRI.splitlines()
    lines[line - 1] = bad
    with pytest.raises(MeshError, match=f"line {line}"):
        load_obj(write(tmp_path, "\n".join(lines) + "\n"))


def test_zero_normal_rejected(tmp_path):
    with pytest.raises(MeshError, match="zero normal"):
        load_obj(write(tmp_path, TRI.replace("vn 0 0 1\nf", "vn 0 0 0\nf")))


def test_normals_renormalized(tmp_path):
    mesh = load_obj(write(tmp_path, TRI.replace("vn 0 0 1", "vn 0 0 2")))
    np.testing.assert_array_equal(mesh.normals, np.tile([0.0, 0.0, 1.0], (3, 1)))


def test_negative_indices_and_texcoords(tmp_path):
    text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvn 0 0 1\nf -3/1/-1 -2/2/-1 -1/3/-1\n"
    mesh = load_obj(write(tmp_path, text))
    assert mesh.faces.tolist() == [[0, 1, 2]]
    assert mesh.texcoords.shape == (3, 2) and mesh.face_texcoords.tolist() == [[0, 1, 2]]
    out = tmp_path / "out.obj"
    write_obj(mesh, out)
    back = load_obj(out)
    np.testing.assert_array_equal(back.texcoords, mesh.texcoords)
    assert "f 1/1/1 2/2/2 3/3/3" in out.read_text()


def test_shared_position_different_normals(tmp_path):
    cube = cube_mesh()
    path = tmp_path / "c.obj"
    write_obj(cube, path)
    back = load_obj(path)
    assert len(back) == 24 and len(back.faces) == 12


def test_round_trip_nine_digits(tmp_path):
    rng = np.random.default_rng(3)
    n = rng.normal(size=(4, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    mesh = Mesh(rng.normal(size=(4, 3)) * 100, n, [[0, 1, 2], [0, 2, 3]])
    a, b = tmp_path / "a.obj", tmp_path / "b.obj"
    write_obj(mesh, a)
    back = load_obj(a)
    np.testing.assert_allclose(back.positions, mesh.positions, rtol=1e-8)
    np.testing.assert_allclose(back.normals, mesh.normals, rtol=0, atol=1e-8)
    assert back.faces.tolist() == mesh.faces.tolist()
    write_obj(back, b)
    assert a.read_text() == b.read_text()


def test_zero_normals_written_plainly(tmp_path):
    out, _ = warp_mesh(cube_mesh(), load_warp("flatten"))
    path = tmp_path / "flat.obj"
    write_obj(out, path)
    text = path.read_text()
    assert text.count("vn 0 0 0\n") == 16
    assert not any(tok == "-0" for tok in text.split())


def test_zero_warp_obj_pipeline(tmp_path):
    src = tmp_path / "in.obj"
    dst = tmp_path / "out.obj"
    write_obj(uv_sphere(), src)
    out, _ = warp_mesh(load_obj(src), compile_warp("vec3(0.0)"))
    write_obj(out, dst)
    assert src.read_bytes() == dst.read_bytes()

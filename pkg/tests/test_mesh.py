"""Mesh construction, I/O, and signed distance tests."""

import numpy as np
import pytest

from dextraj.geometry import (
    MeshError,
    TriangleMesh,
    box_mesh,
    closest_point_on_triangles,
    icosphere_mesh,
    load_obj,
    save_obj,
)
from oracles import analytic_box_sdf, mesh_sdf_oracle, point_triangle_distance


def test_box_mesh_valid():
    m = box_mesh([0.2, 0.3, 0.4])
    assert m.faces.shape == (12, 3)
    assert m.area == pytest.approx(2 * (0.2 * 0.3 + 0.3 * 0.4 + 0.2 * 0.4))
    lo, hi = m.bounds()
    np.testing.assert_allclose(lo, [-0.1, -0.15, -0.2])
    np.testing.assert_allclose(hi, [0.1, 0.15, 0.2])


def test_icosphere_mesh_valid():
    m = icosphere_mesh(0.05, 2)
    assert m.faces.shape == (320, 3)
    r = np.linalg.norm(m.vertices, axis=1)
    np.testing.assert_allclose(r, 0.05, atol=1e-12)


def test_watertight_validation_rejects_open_mesh():
    # a single tetrahedron face removed leaves a boundary edge
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    f = np.array([[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]])
    TriangleMesh(v, f)  # full tetrahedron is fine
    with pytest.raises(MeshError):
        TriangleMesh(v, f[:3].repeat(2, axis=0)[:4])


def test_inside_out_mesh_rejected():
    m = box_mesh([1, 1, 1])
    flipped = m.faces[:, ::-1]
    with pytest.raises(MeshError):
        TriangleMesh(m.vertices, flipped)


def test_degenerate_face_rejected():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 0, 1]])
    f = np.array([[0, 1, 2], [0, 1, 3], [1, 2, 3], [0, 3, 2]])
    with pytest.raises(MeshError):
        TriangleMesh(v, f)


def test_signed_distance_box_against_analytic():
    ext = np.array([0.12, 0.2, 0.08])
    m = box_mesh(ext)
    rng = np.random.default_rng(42)
    pts = rng.uniform(-0.25, 0.25, size=(400, 3))
    got = m.signed_distance(pts)
    want = np.array([analytic_box_sdf(p, ext) for p in pts])
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_signed_distance_sphere_mesh_independent_oracle():
    m = icosphere_mesh(0.05, 1)
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.09, 0.09, size=(40, 3))
    got = m.signed_distance(pts)
    want = np.array([mesh_sdf_oracle(p, m.vertices, m.faces, rng) for p in pts])
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_signed_distance_sphere_mesh_approximates_sphere():
    # a subdivided icosphere approaches the true sphere from inside
    m = icosphere_mesh(0.05, 3)
    rng = np.random.default_rng(4)
    dirs = rng.normal(size=(50, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = dirs * rng.uniform(0.02, 0.09, size=(50, 1))
    got = m.signed_distance(pts)
    want = np.linalg.norm(pts, axis=1) - 0.05
    assert np.abs(got - want).max() < 3e-4


def test_signed_distance_sign_convention():
    m = box_mesh([0.1, 0.1, 0.1])
    assert m.signed_distance(np.zeros(3)) == pytest.approx(-0.05)
    assert m.signed_distance(np.array([0.1, 0.0, 0.0])) == pytest.approx(0.05)
    # near a corner the pseudonormal still gives the right sign
    assert m.signed_distance(np.array([0.049, 0.049, 0.049])) < 0
    assert m.signed_distance(np.array([0.051, 0.051, 0.051])) > 0


def test_closest_point_on_triangles_vs_oracle():
    rng = np.random.default_rng(5)
    for _ in range(300):
        a, b, c = rng.normal(size=(3, 3))
        if np.linalg.norm(np.cross(b - a, c - a)) < 1e-3:
            continue
        p = rng.normal(size=3)
        cp, _ = closest_point_on_triangles(p, a, b, c)
        np.testing.assert_allclose(
            np.linalg.norm(p - cp), point_triangle_distance(p, a, b, c), atol=1e-12
        )


def test_closest_point_feature_codes():
    a, b, c = np.array([0.0, 0, 0]), np.array([1.0, 0, 0]), np.array([0.0, 1, 0])
    cases = [
        (np.array([0.25, 0.25, 1.0]), 0),   # above interior
        (np.array([-1.0, -1.0, 0.0]), 1),   # vertex a
        (np.array([2.0, -1.0, 0.0]), 2),    # vertex b
        (np.array([-1.0, 2.0, 0.0]), 3),    # vertex c
        (np.array([0.5, -1.0, 0.0]), 4),    # edge ab
        (np.array([1.0, 1.0, 0.0]), 5),     # edge bc
        (np.array([-1.0, 0.5, 0.0]), 6),    # edge ca
    ]
    for p, code in cases:
        _, feat = closest_point_on_triangles(p, a, b, c)
        assert int(feat) == code, p


def test_closest_point_mesh_api():
    m = box_mesh([0.2, 0.2, 0.2])
    cp, fid = m.closest_point(np.array([0.5, 0.0, 0.0]))
    np.testing.assert_allclose(cp, [0.1, 0.0, 0.0], atol=1e-15)
    assert 0 <= fid < 12


def test_obj_round_trip(tmp_path):
    m = icosphere_mesh(0.03, 1)
    path = tmp_path / "mesh.obj"
    save_obj(m, path)
    m2 = load_obj(path)
    np.testing.assert_array_equal(m.vertices, m2.vertices)
    np.testing.assert_array_equal(m.faces, m2.faces)
    assert m.content_hash() == m2.content_hash()
    # byte-identical rewrite
    p2 = tmp_path / "mesh2.obj"
    save_obj(m2, p2)
    assert path.read_bytes() == p2.read_bytes()


def test_obj_rejects_unsupported(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1 2 3\n")
    with pytest.raises(MeshError):
        load_obj(p)
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2 3/3\n")
    with pytest.raises(MeshError):
        load_obj(p)


def test_sampling_deterministic():
    m = box_mesh([0.1, 0.2, 0.3])
    s1 = m.sample_surface(64, seed=9)
    s2 = m.sample_surface(64, seed=9)
    np.testing.assert_array_equal(s1, s2)
    c1 = m.canonical_samples(32)
    c2 = box_mesh([0.1, 0.2, 0.3]).canonical_samples(32)
    np.testing.assert_array_equal(c1, c2)
    # samples lie on the surface
    assert np.abs(m.signed_distance(s1)).max() < 1e-12


def test_scaled():
    m = box_mesh([0.1, 0.1, 0.1]).scaled(2.0)
    assert m.signed_distance(np.zeros(3)) == pytest.approx(-0.1)

import math

import numpy as np
import pytest

from symplane.geometry import (
    CameraPose,
    Reflection,
    RigidTransform,
    SymPlane,
    plane_from_g,
    project_point,
    reflection_from_plane,
)


def test_identity_transform_is_noop(rng):
    pts = rng.normal(size=(50, 3))
    out = RigidTransform.identity().apply(pts)
    np.testing.assert_allclose(out, pts)


def test_axis_angle_rotation_is_orthonormal(rng):
    for _ in range(20):
        axis = rng.normal(size=3)
        t = RigidTransform.from_axis_angle(axis, rng.uniform(-math.pi, math.pi))
        R = t.rotation
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_compose_then_inverse_roundtrip(rng):
    a = RigidTransform.from_axis_angle(rng.normal(size=3), 0.7, translation=(1, -2, 3))
    b = RigidTransform.from_axis_angle(rng.normal(size=3), -1.2, translation=(0, 5, 1))
    pts = rng.normal(size=(30, 3)) * 10

    ab = a.compose(b)
    np.testing.assert_allclose(ab.apply(pts), a.apply(b.apply(pts)), atol=1e-12)
    back = ab.inverse().apply(ab.apply(pts))
    np.testing.assert_allclose(back, pts, atol=1e-10)


def test_rigid_transform_json_roundtrip(rng):
    t = RigidTransform.from_axis_angle((0.3, -1.0, 0.2), 0.9, translation=(4, 5, 6))
    t2 = RigidTransform.from_json(t.to_json())
    np.testing.assert_allclose(t2.rotation, t.rotation)
    np.testing.assert_allclose(t2.translation, t.translation)


def test_plane_normal_is_unit(rng):
    for _ in range(50):
        p = SymPlane(rng.uniform(0, math.pi), rng.uniform(-math.pi, math.pi),
                     rng.uniform(-100, 100))
        assert np.linalg.norm(p.normal) == pytest.approx(1.0, abs=1e-14)


def test_plane_from_normal_offset_roundtrip(rng):
    for _ in range(50):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        off = rng.uniform(-50, 50)
        p = SymPlane.from_normal_offset(n, off)
        # same plane: normal parallel, same signed distances up to global sign
        s = math.copysign(1.0, float(n @ p.normal))
        np.testing.assert_allclose(s * p.normal, n, atol=1e-12)
        assert s * p.offset == pytest.approx(off, abs=1e-12)


def test_signed_distance_linear_and_zero_on_plane(rng):
    p = SymPlane.from_normal_offset((1.0, 0.0, 0.0), 12.0)
    pts = rng.uniform(-30, 30, size=(40, 3))
    d = p.signed_distance(pts)
    np.testing.assert_allclose(d, pts[:, 0] - 12.0, atol=1e-12)
    on_plane = pts.copy()
    on_plane[:, 0] = 12.0
    np.testing.assert_allclose(p.signed_distance(on_plane), 0.0, atol=1e-12)


def test_canonical_fixes_antipodal_ambiguity(rng):
    for _ in range(50):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        a = SymPlane.from_normal_offset(n, 7.5).canonical()
        b = SymPlane.from_normal_offset(-n, -7.5).canonical()
        assert a.theta == pytest.approx(b.theta, abs=1e-9)
        assert a.phi == pytest.approx(b.phi, abs=1e-9)
        assert a.offset == pytest.approx(b.offset, abs=1e-9)


def test_reflection_is_involution(rng):
    pts = rng.uniform(-80, 80, size=(10_000, 3))
    for _ in range(5):
        plane = SymPlane(rng.uniform(0, math.pi), rng.uniform(-math.pi, math.pi),
                         rng.uniform(-40, 40))
        mirror = reflection_from_plane(plane)
        twice = mirror.apply(mirror.apply(pts))
        assert np.abs(twice - pts).max() < 1e-9


def test_reflection_fixes_points_on_plane_and_det_is_minus_one(rng):
    plane = SymPlane(1.1, -0.4, 17.0)
    mirror = reflection_from_plane(plane)
    assert np.linalg.det(mirror.linear) == pytest.approx(-1.0, abs=1e-12)

    # points on the plane are fixed
    n = plane.normal
    u = np.cross(n, [0.0, 0.0, 1.0])
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    base = plane.offset * n
    pts = base + np.outer(rng.uniform(-20, 20, 30), u) + np.outer(
        rng.uniform(-20, 20, 30), v)
    np.testing.assert_allclose(mirror.apply(pts), pts, atol=1e-10)

    # reflected points sit at opposite signed distance
    pts2 = rng.uniform(-50, 50, size=(30, 3))
    np.testing.assert_allclose(
        plane.signed_distance(mirror.apply(pts2)), -plane.signed_distance(pts2),
        atol=1e-10)


def test_plane_from_g_matches_conjugated_reflection(rng):
    Fx = np.diag([-1.0, 1.0, 1.0])
    for _ in range(20):
        g = RigidTransform.from_axis_angle(
            rng.normal(size=3), rng.uniform(-2, 2),
            translation=rng.uniform(-30, 30, size=3))
        # conjugate the YZ-plane flip through g, composed by hand
        R, t = g.rotation, g.translation
        lin = R @ Fx @ R.T
        trans = t - lin @ t
        mirror = reflection_from_plane(plane_from_g(g))
        pts = rng.uniform(-40, 40, size=(20, 3))
        np.testing.assert_allclose(
            mirror.apply(pts), pts @ lin.T + trans, atol=1e-9)


def test_plane_json_roundtrip():
    p = SymPlane(0.8, -2.1, 33.25)
    q = SymPlane.from_json(p.to_json())
    assert (q.theta, q.phi, q.offset) == (p.theta, p.phi, p.offset)
    with pytest.raises(ValueError):
        SymPlane.from_json({"theta": 1.0})  # missing keys


def test_camera_pose_json_roundtrip_and_source():
    cam = CameraPose(sdd=1000.0, sid=700.0, det_dims=(64, 48),
                     pixel_spacing=(1.5, 1.5),
                     extrinsic=RigidTransform.from_axis_angle(
                         (0, 0, 1), 0.3, translation=(10, 20, 30)))
    cam2 = CameraPose.from_json(cam.to_json())
    np.testing.assert_allclose(cam2.source_world, cam.source_world)
    assert cam2.det_dims == cam.det_dims
    # source sits sid away from the isocenter
    d = np.linalg.norm(cam.source_world - cam.isocenter_world)
    assert d == pytest.approx(cam.sid)


def test_project_point_hits_detector_center():
    cam = CameraPose(sdd=1000.0, sid=700.0, det_dims=(65, 65),
                     pixel_spacing=(1.0, 1.0),
                     extrinsic=RigidTransform.identity())
    uv = project_point(cam, cam.isocenter_world)
    # isocenter projects to the detector's central pixel
    np.testing.assert_allclose(uv, [(65 - 1) / 2.0, (65 - 1) / 2.0], atol=1e-9)


def test_projection_scales_with_depth():
    cam = CameraPose(sdd=1000.0, sid=500.0, det_dims=(129, 129),
                     pixel_spacing=(1.0, 1.0),
                     extrinsic=RigidTransform.identity())
    iso = cam.isocenter_world
    src = cam.source_world
    axis = (iso - src) / np.linalg.norm(iso - src)
    # pick an in-plane direction orthogonal to the viewing axis
    u = np.cross(axis, [0.0, 0.0, 1.0])
    if np.linalg.norm(u) < 1e-6:
        u = np.cross(axis, [0.0, 1.0, 0.0])
    u /= np.linalg.norm(u)
    p = iso + 10.0 * u
    uv_near = project_point(cam, p)
    uv_center = project_point(cam, iso)
    shift = np.linalg.norm(np.asarray(uv_near) - np.asarray(uv_center))
    # magnification at the isocenter is sdd/sid = 2
    assert shift == pytest.approx(20.0, rel=1e-6)

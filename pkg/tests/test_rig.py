import numpy as np
import pytest

from rigsplat.errors import DegenerateTriangleError, LoadError, ShapeError
from rigsplat.rig import (
    Camera,
    ParamRig,
    RigParams,
    apply_lbs,
    compose_head_pose,
    evaluate_rig,
    joint_matrices,
    load_rig,
    save_rig,
    triangle_frame,
    triangle_frames,
    world_to_pixel,
)
from rigsplat.toydata import make_toy_rig
from rigsplat.transforms import axis_angle_to_rotmat


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    from rigsplat.transforms import quat_to_rotmat

    return quat_to_rotmat(q)


# ---------------------------------------------------------------- rig eval

def test_evaluate_rig_identity_returns_template():
    rig = make_toy_rig(seed=0)
    posed = evaluate_rig(rig, RigParams.zero(rig))
    np.testing.assert_allclose(posed, rig.template_vertices, atol=1e-12)


def test_evaluate_rig_unit_blendshape_adds_delta_exactly():
    rig = make_toy_rig(seed=0)
    for k in range(rig.n_blendshapes):
        params = RigParams.zero(rig)
        params.psi[k] = 1.0
        posed = evaluate_rig(rig, params)
        np.testing.assert_allclose(
            posed, rig.template_vertices + rig.blendshapes[k], atol=1e-12)


def test_lbs_hand_case_90_degree_z():
    # vertex at (1,0,0) fully bound to a joint at the origin, rotated 90deg
    # about z -> (0,1,0)
    rig = ParamRig(
        template_vertices=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                                    [0.0, 0.0, 1.0]]),
        faces=np.array([[0, 1, 2]]),
        blendshapes=np.zeros((0, 3, 3)),
        joint_parents=np.array([-1]),
        joint_rest_rot=np.eye(3)[None],
        joint_rest_trans=np.zeros((1, 3)),
        skin_weights=np.ones((3, 1)),
    ).validate()
    params = RigParams(psi=np.zeros(0),
                       theta=np.array([[0.0, 0.0, np.pi / 2]]),
                       head_rot=np.zeros(3), head_trans=np.zeros(3))
    posed = evaluate_rig(rig, params)
    np.testing.assert_allclose(posed[0], [0.0, 1.0, 0.0], atol=1e-12)


def test_evaluate_rig_dimension_mismatch():
    rig = make_toy_rig(seed=0)
    params = RigParams.zero(rig)
    params.psi = np.zeros(rig.n_blendshapes + 1)
    with pytest.raises(ShapeError):
        evaluate_rig(rig, params)
    params = RigParams.zero(rig)
    params.theta = np.zeros((rig.n_joints + 2, 3))
    with pytest.raises(ShapeError):
        evaluate_rig(rig, params)


def test_blendshape_linearity_under_identity_joints():
    rig = make_toy_rig(seed=1)
    rng = np.random.default_rng(4)
    psi1 = rng.normal(size=rig.n_blendshapes)
    psi2 = rng.normal(size=rig.n_blendshapes)
    a, b = 0.7, -1.3

    def ev(psi):
        p = RigParams.zero(rig)
        p.psi = psi
        return evaluate_rig(rig, p)

    lhs = ev(a * psi1 + b * psi2)
    rhs = a * ev(psi1) + b * ev(psi2) - (a + b - 1) * rig.template_vertices
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_lbs_partition_of_unity_rigid_motion():
    # premultiplying every joint matrix by one rigid transform moves all
    # vertices rigidly
    rig = make_toy_rig(seed=2)
    rng = np.random.default_rng(5)
    theta = rng.uniform(-0.4, 0.4, size=(rig.n_joints, 3))
    mats = joint_matrices(rig, theta)
    G_R = random_rotation(rng)
    G_t = rng.normal(size=3)
    moved = mats.copy()
    for j in range(rig.n_joints):
        moved[j, :, :3] = G_R @ mats[j, :, :3]
        moved[j, :, 3] = G_R @ mats[j, :, 3] + G_t
    v = rig.template_vertices
    base = apply_lbs(v, rig.skin_weights, mats)
    out = apply_lbs(v, rig.skin_weights, moved)
    np.testing.assert_allclose(out, base @ G_R.T + G_t, atol=1e-9)


# ---------------------------------------------------------------- frames

def test_triangle_frame_hand_case():
    fr = triangle_frame((0, 0, 0), (1, 0, 0), (0, 1, 0))
    np.testing.assert_allclose(fr.M, [1 / 3, 1 / 3, 0], atol=1e-15)
    np.testing.assert_allclose(fr.R[:, 0], [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(fr.R[:, 1], [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(fr.R[:, 2], [0, -1, 0], atol=1e-15)
    assert fr.S == pytest.approx(1.0, abs=1e-15)


def test_triangle_frame_orthonormal_right_handed():
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = rng.normal(size=(3, 3))
        try:
            fr = triangle_frame(v[0], v[1], v[2])
        except DegenerateTriangleError:
            continue
        np.testing.assert_allclose(fr.R.T @ fr.R, np.eye(3), atol=1e-9)
        assert np.linalg.det(fr.R) == pytest.approx(1.0, abs=1e-9)
        assert fr.S > 0


def test_triangle_frame_uniform_scale():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(3, 3))
    k = 3.7
    f1 = triangle_frame(*v)
    f2 = triangle_frame(*(k * v))
    np.testing.assert_allclose(f2.R, f1.R, atol=1e-12)
    assert f2.S == pytest.approx(k * f1.S, rel=1e-12)
    np.testing.assert_allclose(f2.M, k * f1.M, atol=1e-12)


def test_triangle_frame_rigid_equivariance():
    rng = np.random.default_rng(2)
    for _ in range(50):
        v = rng.normal(size=(3, 3))
        Q = random_rotation(rng)
        t = rng.normal(size=3)
        f1 = triangle_frame(*v)
        f2 = triangle_frame(*(v @ Q.T + t))
        np.testing.assert_allclose(f2.R, Q @ f1.R, atol=1e-9)
        np.testing.assert_allclose(f2.M, Q @ f1.M + t, atol=1e-9)
        assert f2.S == pytest.approx(f1.S, abs=1e-9)


def test_degenerate_triangle_raises():
    with pytest.raises(DegenerateTriangleError):
        triangle_frame((0, 0, 0), (1, 0, 0), (2, 0, 0))


def test_triangle_frames_degenerate_fallback():
    rig = make_toy_rig(seed=0)
    good = triangle_frames(rig.template_vertices, rig.faces)
    verts = rig.template_vertices.copy()
    # collapse one triangle onto a single point
    tri = rig.faces[7]
    verts[tri[1]] = verts[tri[0]]
    verts[tri[2]] = verts[tri[0]]
    frames = triangle_frames(verts, rig.faces, fallback=good)
    np.testing.assert_array_equal(frames.R[7], good.R[7])
    assert frames.S[7] == good.S[7]
    with pytest.raises(DegenerateTriangleError):
        triangle_frames(verts, rig.faces)


def test_triangle_frames_matches_single():
    rig = make_toy_rig(seed=0)
    frames = triangle_frames(rig.template_vertices, rig.faces)
    for t in (0, 5, 100, rig.n_faces - 1):
        v = rig.template_vertices[rig.faces[t]]
        single = triangle_frame(v[0], v[1], v[2])
        np.testing.assert_allclose(frames.R[t], single.R, atol=1e-14)
        np.testing.assert_allclose(frames.M[t], single.M, atol=1e-14)
        assert frames.S[t] == pytest.approx(single.S, rel=1e-14)


# ---------------------------------------------------------------- camera

def make_camera():
    return Camera(fx=100.0, fy=100.0, cx=256.0, cy=256.0, width=512,
                  height=512, near=0.5, far=100.0).validate()


def test_world_to_pixel_optical_axis():
    cam = make_camera()
    pixel, depth, ok = world_to_pixel(cam, np.array([0.0, 0.0, 4.0]))
    np.testing.assert_allclose(pixel, [256.0, 256.0])
    assert depth == pytest.approx(4.0)
    assert ok


def test_world_to_pixel_hand_case():
    cam = make_camera()
    d = 2.5
    pixel, depth, ok = world_to_pixel(cam, np.array([d, 0.0, d]))
    np.testing.assert_allclose(pixel, [356.0, 256.0])
    assert ok


def test_world_to_pixel_near_clip():
    cam = make_camera()
    _, _, ok = world_to_pixel(cam, np.array([0.0, 0.0, 0.25]))
    assert not ok
    _, _, ok = world_to_pixel(cam, np.array([0.0, 0.0, 150.0]))
    assert not ok


def test_camera_invariants():
    with pytest.raises(ShapeError):
        Camera(fx=-1, fy=1, cx=0, cy=0, width=8, height=8, near=0.1,
               far=1.0).validate()
    with pytest.raises(ShapeError):
        Camera(fx=1, fy=1, cx=0, cy=0, width=8, height=8, near=2.0,
               far=1.0).validate()


def test_compose_head_pose_equals_posing_the_mesh():
    rig = make_toy_rig(seed=3)
    rng = np.random.default_rng(6)
    params = RigParams(
        psi=rng.normal(size=rig.n_blendshapes),
        theta=rng.uniform(-0.3, 0.3, size=(rig.n_joints, 3)),
        head_rot=rng.normal(size=3) * 0.4,
        head_trans=rng.normal(size=3) * 0.2,
    )
    cam = make_camera()
    posed_world = evaluate_rig(rig, params)
    unposed = evaluate_rig(rig, RigParams(params.psi, params.theta,
                                          np.zeros(3), np.zeros(3)))
    cam2 = compose_head_pose(cam, params.head_rot, params.head_trans)
    p1, d1, _ = world_to_pixel(cam, posed_world)
    p2, d2, _ = world_to_pixel(cam2, unposed)
    np.testing.assert_allclose(p1, p2, atol=1e-9)
    np.testing.assert_allclose(d1, d2, atol=1e-12)


# ---------------------------------------------------------------- file I/O

def test_rig_roundtrip(tmp_path):
    rig = make_toy_rig(seed=4)
    path = tmp_path / "rig.txt"
    save_rig(rig, path)
    back = load_rig(path)
    np.testing.assert_array_equal(back.template_vertices, rig.template_vertices)
    np.testing.assert_array_equal(back.faces, rig.faces)
    np.testing.assert_array_equal(back.blendshapes, rig.blendshapes)
    np.testing.assert_array_equal(back.joint_parents, rig.joint_parents)
    np.testing.assert_allclose(back.joint_rest_rot, rig.joint_rest_rot,
                               atol=1e-12)
    np.testing.assert_array_equal(back.joint_rest_trans, rig.joint_rest_trans)
    np.testing.assert_array_equal(back.skin_weights, rig.skin_weights)


def test_rig_bad_header(tmp_path):
    path = tmp_path / "rig.txt"
    path.write_text("not-a-rig v9\n")
    with pytest.raises(LoadError):
        load_rig(path)


def test_rig_validation():
    rig = make_toy_rig(seed=0)
    bad = ParamRig(
        template_vertices=rig.template_vertices,
        faces=rig.faces.copy(),
        blendshapes=rig.blendshapes,
        joint_parents=rig.joint_parents,
        joint_rest_rot=rig.joint_rest_rot,
        joint_rest_trans=rig.joint_rest_trans,
        skin_weights=rig.skin_weights.copy(),
    )
    bad.faces[0, 0] = rig.n_vertices + 5
    with pytest.raises(ShapeError):
        bad.validate()
    bad.faces[0, 0] = 0
    bad.skin_weights[0] *= 2.0
    with pytest.raises(ShapeError):
        bad.validate()

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from depthadjust.camera import (
    Intrinsics,
    Pose,
    backward_warp,
    backward_warp_jacobians,
    forward_splat_depth,
    pixel_grid,
    project,
    relative_pose,
    unproject,
)
from depthadjust.errors import InvalidInputError

INTR = Intrinsics(100.0, 100.0, 40.0, 30.0, 80, 60)


def test_unproject_principal_point():
    X = unproject(np.array([40.0, 30.0]), 2.0, INTR)
    np.testing.assert_allclose(X, [0.0, 0.0, 2.0])


def test_unproject_offset_pixel():
    X = unproject(np.array([140.0, 30.0]), 3.0, INTR)
    np.testing.assert_allclose(X, [3.0, 0.0, 3.0])


def test_unproject_rejects_nonpositive_depth():
    with pytest.raises(InvalidInputError):
        unproject(np.array([1.0, 1.0]), 0.0, INTR)


def test_project_behind_camera_is_invalid():
    uv, z, valid = project(np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]]), INTR)
    assert valid.tolist() == [False, True]
    assert np.all(np.isnan(uv[0]))
    np.testing.assert_allclose(uv[1], [40.0, 30.0])


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0, 79), st.floats(0, 59), st.floats(0.1, 50.0),
)
def test_project_inverts_unproject(u, v, d):
    X = unproject(np.array([u, v]), d, INTR)
    uv, z, valid = project(X, INTR)
    assert valid
    np.testing.assert_allclose(uv, [u, v], atol=1e-9)
    assert z == pytest.approx(d)


def test_intrinsics_scaled():
    s = INTR.scaled(0.25)
    assert (s.fx, s.cx, s.width, s.height) == (25.0, 10.0, 20, 15)


def test_intrinsics_validation():
    with pytest.raises(InvalidInputError):
        Intrinsics(-1.0, 1.0, 0.0, 0.0, 10, 10)


def test_pose_rejects_non_rotation():
    with pytest.raises(InvalidInputError):
        Pose(np.diag([1.0, 1.0, 2.0]), np.zeros(3))


def test_pose_compose_inverse_is_identity():
    rng = np.random.default_rng(0)
    P = Pose(Rotation.random(random_state=1).as_matrix(), rng.normal(size=3))
    np.testing.assert_allclose(P.compose(P.inverse()).matrix(), np.eye(4), atol=1e-12)


def test_relative_pose_identical_is_exact_identity():
    P = Pose(Rotation.from_rotvec([0.1, 0.2, 0.3]).as_matrix(), np.array([1.0, 2.0, 3.0]))
    rel = relative_pose(P, P)
    assert np.array_equal(rel.rotation, np.eye(3)) and np.array_equal(rel.translation, np.zeros(3))


def _planar(depth=2.0, H=60, W=80):
    rng = np.random.default_rng(3)
    img = rng.random((H, W, 3))
    return img, np.full((H, W), depth)


def test_warp_identity_reproduces_source():
    img, d = _planar()
    w = backward_warp(d, INTR, Pose.identity(), img, d, INTR, Pose.identity())
    assert w.valid.all()
    assert np.array_equal(w.warped, img)
    assert np.array_equal(w.pseudo_depth, d)


def test_warp_pure_translation_shifts_pixels():
    # camera j sits 0.02 m to the right: x_j = x_i - 0.02, so a point at depth 2
    # appears 1 px further left in j and j's pixel u-1 is sampled for pixel u.
    img, d = _planar()
    pose_j = Pose(np.eye(3), np.array([-0.02, 0.0, 0.0]))
    w = backward_warp(d, INTR, Pose.identity(), img, d, INTR, pose_j)
    u, v = pixel_grid(60, 80)
    np.testing.assert_allclose(w.coords[..., 0][w.valid], (u - 1.0)[w.valid], atol=1e-12)
    np.testing.assert_allclose(w.warped[:, 1:][w.valid[:, 1:]], img[:, :-1][w.valid[:, 1:]], atol=1e-12)
    assert not w.valid[:, 0].any()


def test_warp_out_of_bounds_is_zero():
    img, d = _planar()
    pose_j = Pose(np.eye(3), np.array([-5.0, 0.0, 0.0]))
    w = backward_warp(d, INTR, Pose.identity(), img, d, INTR, pose_j)
    assert w.valid_count == 0
    assert not w.warped.any()


def test_warp_jacobians_match_finite_differences():
    rng = np.random.default_rng(5)
    H, W = 20, 24
    intr = Intrinsics(30.0, 30.0, 11.7, 9.6, W, H)
    from scipy import ndimage

    img = ndimage.gaussian_filter(rng.random((H, W, 2)), (2, 2, 0))
    di = 2 + ndimage.gaussian_filter(rng.random((H, W)), 3)
    dj = 2 + ndimage.gaussian_filter(rng.random((H, W)), 3)
    pj = Pose(Rotation.from_rotvec([0.01, -0.02, 0.005]).as_matrix(), np.array([0.05, -0.02, 0.01]))
    jac = backward_warp_jacobians(di, intr, Pose.identity(), img, dj, intr, pj)
    base = backward_warp(di, intr, Pose.identity(), img, dj, intr, pj)
    h = 1e-6
    wp = backward_warp(di + h, intr, Pose.identity(), img, dj, intr, pj)
    wm = backward_warp(di - h, intr, Pose.identity(), img, dj, intr, pj)
    m = base.valid & wp.valid & wm.valid
    # per-pixel derivative: perturbing every pixel at once is fine, pixels are independent
    np.testing.assert_allclose(((wp.coords - wm.coords) / (2 * h))[m], jac.dq_ddepth_i[m], atol=1e-6)
    np.testing.assert_allclose(((wp.warped - wm.warped) / (2 * h))[m], jac.dwarped_ddepth_i[m], atol=1e-5)
    np.testing.assert_allclose(((wp.pseudo_depth - wm.pseudo_depth) / (2 * h))[m], jac.dpseudo_ddepth_i[m], atol=1e-5)
    # support-depth derivative: perturb one source pixel
    r, c = 10, 12
    sel = (jac.support_index == r * W + c) & m[..., None]
    dj_p, dj_m = dj.copy(), dj.copy()
    dj_p[r, c] += h
    dj_m[r, c] -= h
    fp = backward_warp(di, intr, Pose.identity(), img, dj_p, intr, pj).pseudo_depth
    fm = backward_warp(di, intr, Pose.identity(), img, dj_m, intr, pj).pseudo_depth
    fd = (fp - fm) / (2 * h)
    np.testing.assert_allclose(fd[sel.any(-1)], (jac.dpseudo_dsupport * sel).sum(-1)[sel.any(-1)], atol=1e-6)


def test_forward_splat_identity_and_zbuffer():
    d = np.full((60, 80), 3.0)
    d[10:20, 10:20] = 1.5
    out, valid = forward_splat_depth(d, INTR, Pose.identity(), INTR, Pose.identity())
    assert valid.all()
    np.testing.assert_allclose(out, d)


def test_forward_splat_keeps_nearest_surface():
    # a tiny target focal length sends every source pixel to the center pixel
    src = Intrinsics(10.0, 10.0, 1.0, 1.0, 3, 3)
    dst = Intrinsics(1e-3, 1e-3, 1.0, 1.0, 3, 3)
    d = np.array([[4.0, 3.0, 5.0], [2.5, 2.0, 6.0], [7.0, 0.0, 8.0]])
    out, valid = forward_splat_depth(d, src, Pose.identity(), dst, Pose.identity())
    assert valid.sum() == 1 and valid[1, 1]
    assert out[1, 1] == 2.0

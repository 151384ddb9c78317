import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthadjust.camera import Pose, WarpResult, backward_warp
from depthadjust.deformation import ScaleGridParams
from depthadjust.errors import InvalidInputError
from depthadjust.frame import FrameRecord
from depthadjust.objective import (
    FeatureConfig,
    LossConfig,
    depth_loss,
    fallback_features,
    feature_loss_dot,
    feature_loss_ratio,
    pair_loss,
    photometric_loss,
)

from helpers import fd_gradient_check, random_frame


def _warp(values, pseudo=None, valid=None):
    H, W = values.shape[:2]
    valid = np.ones((H, W), bool) if valid is None else valid
    pseudo = np.zeros((H, W)) if pseudo is None else pseudo
    return WarpResult(np.where(valid[..., None], values, 0.0), np.where(valid, pseudo, 0.0), valid, np.zeros((H, W, 2)))


def test_photometric_constant_fields():
    loss, _ = photometric_loss(np.full((4, 5, 3), 0.2), _warp(np.full((4, 5, 3), 0.5)))
    assert loss == pytest.approx(0.3)
    assert photometric_loss(np.full((4, 5, 3), 0.2), _warp(np.full((4, 5, 3), 0.2)))[0] == 0.0


def test_photometric_checkerboard_vs_naive_loop():
    yy, xx = np.mgrid[:12, :16]
    board = ((yy // 2 + xx // 2) % 2).astype(float)[..., None].repeat(3, -1)
    shifted = np.roll(board, 1, axis=1)
    valid = np.ones((12, 16), bool)
    valid[:, 0] = False
    loss, _ = photometric_loss(board, _warp(shifted, valid=valid))
    acc, n = 0.0, 0
    for y in range(12):
        for x in range(16):
            if valid[y, x]:
                n += 1
                for c in range(3):
                    acc += abs(board[y, x, c] - shifted[y, x, c])
    assert loss == pytest.approx(acc / (3 * n), abs=1e-12)


def test_depth_loss_examples():
    loss, gi, gp = depth_loss(np.full((3, 3), 2.0), _warp(np.zeros((3, 3, 1)), np.full((3, 3), 2.5)))
    assert loss == pytest.approx(0.5)
    np.testing.assert_allclose(gi, -1 / 9)
    np.testing.assert_allclose(gp, 1 / 9)


def test_depth_loss_random_vs_naive_loop():
    rng = np.random.default_rng(1)
    d, pd = rng.random((7, 9)) + 1, rng.random((7, 9)) + 1
    valid = rng.random((7, 9)) > 0.3
    loss, _, _ = depth_loss(d, _warp(np.zeros((7, 9, 1)), pd, valid))
    vals = [abs(d[y, x] - pd[y, x]) for y in range(7) for x in range(9) if valid[y, x]]
    assert loss == pytest.approx(sum(vals) / len(vals), abs=1e-12)


def test_ratio_feature_examples():
    assert feature_loss_ratio(np.array([[[3.0]]]), _warp(np.array([[[1.0]]])))[0] == pytest.approx(0.5, abs=1e-6)
    F = np.random.default_rng(0).random((4, 4, 8))
    assert feature_loss_ratio(F, _warp(F))[0] == 0.0
    assert feature_loss_ratio(np.zeros((2, 2, 1)), _warp(np.zeros((2, 2, 1))))[0] == 0.0


def test_ratio_feature_rejects_negative():
    with pytest.raises(InvalidInputError):
        feature_loss_ratio(-np.ones((2, 2, 1)), _warp(np.ones((2, 2, 1))))


def test_dot_feature_examples():
    F = np.random.default_rng(0).random((4, 4, 8)) + 0.1
    assert feature_loss_dot(F, _warp(F))[0] == pytest.approx(-1.0, abs=1e-12)
    a = np.zeros((2, 2, 2))
    a[..., 0] = 1
    b = np.zeros((2, 2, 2))
    b[..., 1] = 1
    assert feature_loss_dot(a, _warp(b))[0] == 0.0


def test_dot_feature_unnormalized_vs_naive_loop():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(2, 5, 6, 4))
    valid = rng.random((5, 6)) > 0.2
    loss, _ = feature_loss_dot(a, _warp(b, valid=valid), FeatureConfig(mode="dot", normalize=False))
    acc = [sum(a[y, x, c] * b[y, x, c] for c in range(4)) for y in range(5) for x in range(6) if valid[y, x]]
    assert loss == pytest.approx(-sum(acc) / len(acc), abs=1e-12)


@pytest.mark.parametrize("fn,cfg", [
    (feature_loss_ratio, FeatureConfig()),
    (feature_loss_dot, FeatureConfig(mode="dot")),
    (feature_loss_dot, FeatureConfig(mode="dot", normalize=False)),
])
def test_feature_gradients_fd(fn, cfg):
    rng = np.random.default_rng(7)
    a = rng.random((4, 5, 3)) + 0.05
    b = rng.random((4, 5, 3)) + 0.05
    _, g = fn(a, _warp(b), cfg)
    h = 1e-7
    for k in [(0, 0, 0), (1, 2, 1), (3, 4, 2)]:
        bp, bm = b.copy(), b.copy()
        bp[k] += h
        bm[k] -= h
        fd = (fn(a, _warp(bp), cfg)[0] - fn(a, _warp(bm), cfg)[0]) / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_invalid_pixels_do_not_matter():
    rng = np.random.default_rng(2)
    a, b = rng.random((2, 6, 6, 3))
    valid = np.ones((6, 6), bool)
    valid[0] = False
    base = photometric_loss(a, _warp(b, valid=valid))[0]
    b2 = b.copy()
    b2[0] = 99.0
    a2 = a.copy()
    a2[0] = -5.0
    assert photometric_loss(a2, _warp(b2, valid=valid))[0] == base


def test_fallback_features_constant_and_edge():
    F = fallback_features(np.full((10, 12, 3), 0.4))
    assert F.shape == (10, 12, 8) and np.all(F >= 0)
    np.testing.assert_allclose(F[..., 0], 0.4)
    assert np.abs(F[..., 1:]).max() < 1e-12
    img = np.zeros((10, 12, 3))
    img[:, 6:] = 1.0
    F = fallback_features(img, smooth=1)
    assert np.argmax(F[5, :, 1]) in (5, 6)
    assert np.abs(F[..., 2]).max() < 1e-12


def test_fallback_features_identity_warp_round_trip():
    img = np.random.default_rng(0).random((15, 20, 3))
    F = fallback_features(img)
    from depthadjust.camera import Intrinsics

    intr = Intrinsics(20.0, 20.0, 10.0, 7.0, 20, 15)
    d = np.full((15, 20), 2.0)
    w = backward_warp(d, intr, Pose.identity(), F, d, intr, Pose.identity())
    np.testing.assert_allclose(w.warped, F, atol=1e-6)


def _identical_pair(mode):
    fi = random_frame(np.random.default_rng(0), 0)
    fj = FrameRecord(1, fi.image, fi.depth0, fi.intrinsics, fi.pose, fi.features)
    return fi, fj, LossConfig(feature=FeatureConfig(mode=mode))


def test_identical_frames_zero_loss():
    fi, fj, cfg = _identical_pair("ratio")
    b = pair_loss(fi, fj, np.zeros((8, 10)), np.zeros((8, 10)), cfg)
    assert b.photo == 0.0 and b.depth == 0.0 and b.feat == 0.0 and b.total == 0.0
    assert b.valid_count == 60 * 80


def test_identical_frames_dot_mode_feature_is_minus_one():
    fi, fj, cfg = _identical_pair("dot")
    b = pair_loss(fi, fj, np.zeros((8, 10)), np.zeros((8, 10)), cfg)
    assert b.photo == 0.0 and b.depth == 0.0
    assert b.feat == pytest.approx(-1.0)


def test_frozen_frame_gets_zero_gradient():
    rng = np.random.default_rng(3)
    fi, fj = random_frame(rng, 0), random_frame(rng, 1)
    pj = ScaleGridParams(np.zeros((8, 10)), 1, frozen=True)
    b = pair_loss(fi, fj, ScaleGridParams.zeros((8, 10)), pj)
    assert np.array_equal(b.grad_j, np.zeros((8, 10)))
    assert np.abs(b.grad_i).max() > 0


def test_halved_depth_gradient_points_to_larger_scale():
    # frame i's initial depth is half the truth: raising l_i reduces the loss
    from depthadjust.synthetic import default_scene

    scene = default_scene(8, 30, 40)
    fi, fj = scene.render(0), scene.render(1)
    fi = FrameRecord(0, fi.image, fi.depth0 / 2, fi.intrinsics, fi.pose)
    fj_half = FrameRecord(1, fj.image, fj.depth0, fj.intrinsics, fj.pose)
    cfg = LossConfig(feature=FeatureConfig(mode="none"))
    b = pair_loss(fi, fj_half, np.zeros((8, 10)), np.zeros((8, 10)), cfg)
    assert b.grad_i.sum() < 0
    up = pair_loss(fi, fj_half, np.full((8, 10), 0.05), np.zeros((8, 10)), cfg, gradients=False)
    assert up.total < b.total


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["ratio", "dot", "none"]))
def test_pair_loss_gradients_fd(seed, mode):
    rng = np.random.default_rng(seed)
    fi = random_frame(rng, 0, H=24, W=32)
    fj = random_frame(rng, 1, H=24, W=32)
    li, lj = rng.normal(0, 0.1, (2, 4, 5))
    cfg = LossConfig(feature=FeatureConfig(mode=mode))
    _, _, _, n_bad = fd_gradient_check(fi, fj, li, lj, cfg, h=1e-8)
    assert n_bad == 0

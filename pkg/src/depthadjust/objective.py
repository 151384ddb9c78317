"""Reprojection losses between a frame pair and their analytic gradients.

Every loss is a mean over the valid pixels of one backward warp. Each loss
function returns its value together with the gradient of that value with
respect to the quantities it reads (warped samples, target depth, pseudo
depth); :func:`evaluate_pair` chains these through the warp Jacobians.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .camera import WarpResult, backward_warp
from .deformation import apply_deformation, pullback_gradient, upsample_scale
from .errors import InvalidInputError
from .frame import FrameRecord

FEATURE_MODES = ("ratio", "dot", "none")


@dataclass
class FeatureConfig:
    mode: str = "ratio"
    epsilon: float = 1e-6
    normalize: bool = True

    def __post_init__(self):
        if self.mode not in FEATURE_MODES:
            raise InvalidInputError(f"unknown feature mode {self.mode!r}")
        if not self.epsilon > 0:
            raise InvalidInputError("feature epsilon must be positive")


@dataclass
class LossConfig:
    photo_weight: float = 1.0
    depth_weight: float = 1.0
    feat_weight: float = 1.0
    feature: FeatureConfig = field(default_factory=FeatureConfig)


@dataclass
class LossBundle:
    photo: float
    depth: float
    feat: float
    total: float
    valid_count: int
    grad_i: np.ndarray
    grad_j: np.ndarray
    skipped: bool = False


# Residuals this small are roundoff; their sign is noise that Adam would turn
# into full-size steps, so they count as exact zeros (subgradient 0).
L1_ZERO_TOL = 1e-10


def _l1_sign(r: np.ndarray) -> np.ndarray:
    return np.where(np.abs(r) > L1_ZERO_TOL, np.sign(r), 0.0)


def photometric_loss(image_i: np.ndarray, warp: WarpResult):
    """Mean absolute color difference over valid pixels and 3 channels.

    Returns ``(loss, dloss/dwarped)``.
    """
    n = warp.valid_count
    if n == 0:
        return 0.0, np.zeros_like(warp.warped)
    m = warp.valid[..., None]
    r = np.where(m, image_i - warp.warped, 0.0)
    C = r.shape[-1]
    loss = np.abs(r).sum() / (C * n)
    return float(loss), -_l1_sign(r) / (C * n)


def depth_loss(depth_i: np.ndarray, warp: WarpResult):
    """Mean ``|D_i - D_{j->i}|`` over valid pixels.

    Returns ``(loss, dloss/ddepth_i, dloss/dpseudo_depth)``.
    """
    n = warp.valid_count
    if n == 0:
        z = np.zeros_like(warp.pseudo_depth)
        return 0.0, z, z.copy()
    r = np.where(warp.valid, depth_i - warp.pseudo_depth, 0.0)
    s = _l1_sign(r) / n
    return float(np.abs(r).sum() / n), s, -s


def feature_loss_ratio(features_i: np.ndarray, warp: WarpResult, cfg: FeatureConfig = FeatureConfig()):
    """Normalized feature distance ``|a - b| / (|a + b| + eps)`` averaged over channels and valid pixels."""
    a = np.asarray(features_i, dtype=np.float64)
    b = warp.warped
    if a.shape != b.shape:
        raise InvalidInputError(f"feature shapes differ: {a.shape} vs {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise InvalidInputError("ratio feature loss requires nonnegative features")
    n = warp.valid_count
    if n == 0:
        return 0.0, np.zeros_like(b)
    C = a.shape[-1]
    m = warp.valid[..., None]
    diff = b - a
    s = a + b
    den = np.abs(s) + cfg.epsilon
    num = np.abs(diff)
    loss = np.where(m, num / den, 0.0).sum() / (C * n)
    grad = _l1_sign(diff) / den - num * np.sign(s) / (den * den)
    return float(loss), np.where(m, grad, 0.0) / (C * n)


def feature_loss_dot(features_i: np.ndarray, warp: WarpResult, cfg: FeatureConfig = FeatureConfig(mode="dot")):
    """Negative mean dot product of target and warped features.

    With ``cfg.normalize`` both vectors are scaled to unit length per pixel;
    pixels where either has zero norm contribute nothing.
    """
    a = np.asarray(features_i, dtype=np.float64)
    b = warp.warped
    if a.shape != b.shape:
        raise InvalidInputError(f"feature shapes differ: {a.shape} vs {b.shape}")
    n = warp.valid_count
    if n == 0:
        return 0.0, np.zeros_like(b)
    m = warp.valid
    if not cfg.normalize:
        dots = np.einsum("hwc,hwc->hw", a, b)
        loss = -np.where(m, dots, 0.0).sum() / n
        return float(loss), np.where(m[..., None], -a, 0.0) / n
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    m = m & (na > 0) & (nb > 0)
    na_s = np.where(m, na, 1.0)[..., None]
    nb_s = np.where(m, nb, 1.0)[..., None]
    ah = a / na_s
    bh = b / nb_s
    cos = np.einsum("hwc,hwc->hw", ah, bh)
    loss = -np.where(m, cos, 0.0).sum() / n
    grad = -(ah - cos[..., None] * bh) / nb_s
    return float(loss), np.where(m[..., None], grad, 0.0) / n


def feature_loss(features_i, warp: WarpResult, cfg: FeatureConfig):
    if cfg.mode == "ratio":
        return feature_loss_ratio(features_i, warp, cfg)
    if cfg.mode == "dot":
        return feature_loss_dot(features_i, warp, cfg)
    return 0.0, np.zeros_like(warp.warped)


_GRAY = np.array([0.299, 0.587, 0.114])
_FILTERS = [
    np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]]) / 4.0,
    np.array([[-1, 0, 0], [0, 0, 0], [0, 0, 1]]) / 2.0,
    np.array([[0, 0, -1], [0, 0, 0], [1, 0, 0]]) / 2.0,
    np.array([[1, 0, -1], [0, 0, 0], [-1, 0, 1]]) / 4.0,
    np.array([[-1, -1, -1], [-1, 8, -1], [-1, -1, -1]]) / 8.0,
]


def fallback_features(image: np.ndarray, smooth: int = 3) -> np.ndarray:
    """Cheap nonnegative 8-channel descriptor used when no feature maps are given.

    Channels: grayscale, |d/dx|, |d/dy|, then absolute responses of five fixed
    3x3 filters (Laplacian, two diagonals, saddle, center-surround), each
    box-smoothed.
    """
    image = np.asarray(image, dtype=np.float64)
    gray = image @ _GRAY if image.ndim == 3 else image
    chans = [
        gray,
        np.abs(ndimage.correlate1d(gray, [-0.5, 0.0, 0.5], axis=1, mode="nearest")),
        np.abs(ndimage.correlate1d(gray, [-0.5, 0.0, 0.5], axis=0, mode="nearest")),
    ]
    chans += [np.abs(ndimage.correlate(gray, k, mode="nearest")) for k in _FILTERS]
    out = np.stack([ndimage.uniform_filter(c, size=smooth, mode="nearest") for c in chans], axis=-1)
    return np.maximum(out, 0.0)


@dataclass
class PairEvaluation:
    photo: float
    depth: float
    feat: float
    total: float
    valid_count: int
    grad_depth_i: np.ndarray
    grad_depth_j: np.ndarray

    @property
    def skipped(self) -> bool:
        return self.valid_count == 0


def evaluate_pair(
    frame_i: FrameRecord,
    frame_j: FrameRecord,
    depth_i: np.ndarray,
    depth_j: np.ndarray,
    cfg: LossConfig,
    gradients: bool = True,
) -> PairEvaluation:
    """Loss L(i, j) for given depths and its gradient w.r.t. both depth maps."""
    use_feat = (
        cfg.feature.mode != "none"
        and frame_i.features is not None
        and frame_j.features is not None
    )
    values = frame_j.values if use_feat else frame_j.image
    warp = backward_warp(
        depth_i, frame_i.intrinsics, frame_i.pose,
        values, depth_j, frame_j.intrinsics, frame_j.pose,
        jacobians=gradients,
    )
    n = warp.valid_count
    gi = np.zeros_like(depth_i)
    gj = np.zeros_like(depth_j)
    if n == 0:
        return PairEvaluation(0.0, 0.0, 0.0, 0.0, 0, gi, gj)

    photo, g_photo = photometric_loss(frame_i.image, warp.channels(slice(0, 3)))
    depth, g_di, g_pd = depth_loss(depth_i, warp)
    feat = 0.0
    if use_feat:
        feat, g_feat = feature_loss(frame_i.features, warp.channels(slice(3, None)), cfg.feature)
    total = cfg.photo_weight * photo + cfg.depth_weight * depth + cfg.feat_weight * feat

    if gradients:
        jac = warp.jacobians
        g_warped = cfg.photo_weight * g_photo
        if use_feat:
            g_warped = np.concatenate([g_warped, cfg.feat_weight * g_feat], axis=-1)
        g_pd = cfg.depth_weight * g_pd
        gi = (
            cfg.depth_weight * g_di
            + np.einsum("hwc,hwc->hw", g_warped, jac.dwarped_ddepth_i)
            + g_pd * jac.dpseudo_ddepth_i
        )
        gj = np.bincount(
            jac.support_index.ravel(),
            weights=(g_pd[..., None] * jac.dpseudo_dsupport).ravel(),
            minlength=depth_j.size,
        ).reshape(depth_j.shape)
    return PairEvaluation(photo, depth, feat, total, n, gi, gj)


def depth_to_scale_gradient(grad_depth: np.ndarray, depth0: np.ndarray) -> np.ndarray:
    """dL/dS from dL/dD for ``D = D0 * S`` on valid pixels."""
    return grad_depth * np.where(depth0 > 0, depth0, 0.0)


def pair_loss(
    frame_i: FrameRecord,
    frame_j: FrameRecord,
    params_i,
    params_j,
    cfg: LossConfig = LossConfig(),
    gradients: bool = True,
) -> LossBundle:
    """Total loss of the ordered pair (i, j) and its gradients w.r.t. both log-scale grids.

    With ``gradients=False`` the gradient fields are zero and no Jacobians are formed.
    """
    H, W = frame_i.shape
    Hj, Wj = frame_j.shape
    d_i = apply_deformation(frame_i.depth0, upsample_scale(params_i, H, W))
    d_j = apply_deformation(frame_j.depth0, upsample_scale(params_j, Hj, Wj))
    ev = evaluate_pair(frame_i, frame_j, d_i, d_j, cfg, gradients)
    if not gradients:
        z = np.zeros(np.shape(getattr(params_i, "log_scale", params_i)))
        return LossBundle(ev.photo, ev.depth, ev.feat, ev.total, ev.valid_count, z, np.zeros_like(z), ev.skipped)
    grad_i = pullback_gradient(depth_to_scale_gradient(ev.grad_depth_i, frame_i.depth0), params_i)
    grad_j = pullback_gradient(depth_to_scale_gradient(ev.grad_depth_j, frame_j.depth0), params_j)
    return LossBundle(ev.photo, ev.depth, ev.feat, ev.total, ev.valid_count, grad_i, grad_j, ev.skipped)

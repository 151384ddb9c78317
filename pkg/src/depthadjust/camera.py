"""Pinhole camera model, rigid transforms and reprojection kernels.

Conventions: pixel (u, v) has its center at integer coordinates, u along
columns and v along rows. Poses are camera-from-world. Depth is the camera
z-coordinate, a pixel is valid iff its depth is > 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidInputError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} frame"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def scaled(self, s: float) -> "Intrinsics":
        """Intrinsics of the same camera resampled by factor ``s``.

        All four parameters are multiplied by ``s`` so that pixel coordinates
        scale linearly: a point seen at (u, v) is seen at (s*u, s*v).
        """
        return Intrinsics(
            self.fx * s,
            self.fy * s,
            self.cx * s,
            self.cy * s,
            max(1, int(round(self.width * s))),
            max(1, int(round(self.height * s))),
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid camera-from-world transform ``x_cam = R @ x_world + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidInputError("pose contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise InvalidInputError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        if T.shape != (4, 4):
            raise InvalidInputError(f"expected a 4x4 matrix, got shape {T.shape}")
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return X @ self.rotation.T + self.translation

    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def same_as(self, other: "Pose") -> bool:
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )


def relative_pose(pose_from: Pose, pose_to: Pose) -> Pose:
    """Transform taking camera ``pose_from`` coordinates to camera ``pose_to``.

    Identical poses give the exact identity, so identity warps stay bit-exact.
    """
    if pose_from.same_as(pose_to):
        return Pose.identity()
    return pose_to.compose(pose_from.inverse())


def unproject(p, depth, intr: Intrinsics) -> np.ndarray:
    """Back-project pixel(s) ``p`` (..., 2) at ``depth`` (...) into camera coordinates."""
    p = np.asarray(p, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise InvalidInputError("unproject requires strictly positive depth")
    x = (p[..., 0] - intr.cx) * depth / intr.fx
    y = (p[..., 1] - intr.cy) * depth / intr.fy
    return np.stack([x, y, np.broadcast_to(depth, x.shape)], axis=-1)


def project(X, intr: Intrinsics):
    """Project camera-frame point(s) ``X`` (..., 3).

    Returns ``(uv, z, valid)``; points with z <= 0 are flagged invalid and
    their pixel coordinates are NaN.
    """
    X = np.asarray(X, dtype=np.float64)
    z = X[..., 2]
    valid = z > 0
    zs = np.where(valid, z, 1.0)
    u = np.where(valid, intr.fx * X[..., 0] / zs + intr.cx, np.nan)
    v = np.where(valid, intr.fy * X[..., 1] / zs + intr.cy, np.nan)
    return np.stack([u, v], axis=-1), z, valid


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Float pixel coordinates ``(u, v)`` of shape (height, width)."""
    v, u = np.mgrid[0:height, 0:width]
    return u.astype(np.float64), v.astype(np.float64)


@dataclass
class WarpJacobians:
    """Per-pixel derivatives of a backward warp with respect to depths.

    ``support_index`` holds flat indices into the source frame of the four
    bilinear support pixels; ``dpseudo_dsupport`` the matching derivatives of
    the pseudo depth. Warped values do not depend on source depth.
    """

    dq_ddepth_i: np.ndarray  # (H, W, 2)
    dwarped_ddepth_i: np.ndarray  # (H, W, C)
    dpseudo_ddepth_i: np.ndarray  # (H, W)
    dpseudo_dsupport: np.ndarray  # (H, W, 4)
    support_index: np.ndarray  # (H, W, 4)


@dataclass
class WarpResult:
    """Source values and depth resampled into the target view.

    Invalid pixels carry 0 in ``warped`` and ``pseudo_depth``.
    """

    warped: np.ndarray
    pseudo_depth: np.ndarray
    valid: np.ndarray
    coords: np.ndarray
    jacobians: WarpJacobians | None = None

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())

    def channels(self, sl: slice) -> "WarpResult":
        """View restricted to a slice of the warped channels."""
        jac = self.jacobians
        if jac is not None:
            jac = WarpJacobians(
                jac.dq_ddepth_i,
                jac.dwarped_ddepth_i[..., sl],
                jac.dpseudo_ddepth_i,
                jac.dpseudo_dsupport,
                jac.support_index,
            )
        return WarpResult(self.warped[..., sl], self.pseudo_depth, self.valid, self.coords, jac)


def backward_warp(
    depth_i: np.ndarray,
    intr_i: Intrinsics,
    pose_i: Pose,
    values_j: np.ndarray,
    depth_j: np.ndarray,
    intr_j: Intrinsics,
    pose_j: Pose,
    jacobians: bool = False,
) -> WarpResult:
    """Reproject source frame j onto target frame i through target depth.

    Each target pixel is lifted with ``depth_i``, moved into camera j and
    projected to ``q``. ``values_j`` (Hs, Ws, C) and ``depth_j`` are sampled
    bilinearly at ``q``. The pseudo depth is the camera-i z-coordinate of the
    point rebuilt from ``q`` and the sampled source depth, so it compares
    directly with ``depth_i``. A pixel is valid iff ``q`` lies inside the
    source frame with all four supports at positive depth, and the point is in
    front of both cameras.
    """
    depth_i = np.asarray(depth_i, dtype=np.float64)
    depth_j = np.asarray(depth_j, dtype=np.float64)
    values_j = np.asarray(values_j, dtype=np.float64)
    if values_j.ndim == 2:
        values_j = values_j[..., None]
    H, W = depth_i.shape
    Hs, Ws = depth_j.shape
    if values_j.shape[:2] != (Hs, Ws):
        raise InvalidInputError("source values and source depth differ in shape")
    if Hs < 2 or Ws < 2:
        raise InvalidInputError("source frame must be at least 2x2")
    C = values_j.shape[2]

    rel = relative_pose(pose_i, pose_j)
    R, t = rel.rotation, rel.translation
    identity = (
        np.array_equal(R, np.eye(3)) and not np.any(t) and intr_i == intr_j and (H, W) == (Hs, Ws)
    )

    u, v = pixel_grid(H, W)
    rx = (u - intr_i.cx) / intr_i.fx
    ry = (v - intr_i.cy) / intr_i.fy
    # a = R @ ray, so X_j = d * a + t
    ax = R[0, 0] * rx + R[0, 1] * ry + R[0, 2]
    ay = R[1, 0] * rx + R[1, 1] * ry + R[1, 2]
    az = R[2, 0] * rx + R[2, 1] * ry + R[2, 2]
    d = depth_i
    Xx = d * ax + t[0]
    Xy = d * ay + t[1]
    Z = d * az + t[2]

    ok = (d > 0) & (Z > 0)
    Zs = np.where(ok, Z, 1.0)
    if identity:
        qx, qy = u.copy(), v.copy()
    else:
        qx = intr_j.fx * Xx / Zs + intr_j.cx
        qy = intr_j.fy * Xy / Zs + intr_j.cy
    ok &= (qx >= 0) & (qx <= Ws - 1) & (qy >= 0) & (qy <= Hs - 1)
    qxc = np.where(ok, qx, 0.0)
    qyc = np.where(ok, qy, 0.0)
    x0 = np.minimum(np.floor(qxc), Ws - 2).astype(np.intp)
    y0 = np.minimum(np.floor(qyc), Hs - 2).astype(np.intp)
    fx_ = qxc - x0
    fy_ = qyc - y0

    i00 = y0 * Ws + x0
    idx = np.stack([i00, i00 + 1, i00 + Ws, i00 + Ws + 1], axis=-1)
    wts = np.stack(
        [(1 - fx_) * (1 - fy_), fx_ * (1 - fy_), (1 - fx_) * fy_, fx_ * fy_], axis=-1
    )

    dsup = depth_j.reshape(-1)[idx]
    ok &= np.all(dsup > 0, axis=-1)
    ds = np.einsum("hwk,hwk->hw", wts, dsup)
    r3t = R[0, 2] * t[0] + R[1, 2] * t[1] + R[2, 2] * t[2]
    c = d + r3t
    pd = (ds / Zs) * c - r3t
    ok &= pd > 0

    vsup = values_j.reshape(-1, C)[idx]  # (H, W, 4, C)
    warped = np.einsum("hwk,hwkc->hwc", wts, vsup)
    warped[~ok] = 0.0
    pd = np.where(ok, pd, 0.0)
    coords = np.stack([qx, qy], axis=-1)

    jac = None
    if jacobians:
        Z2 = Zs * Zs
        dqx = intr_j.fx * (ax * Zs - Xx * az) / Z2
        dqy = intr_j.fy * (ay * Zs - Xy * az) / Z2
        # bilinear derivative w.r.t. the sample location
        dvx = (1 - fy_)[..., None] * (vsup[:, :, 1] - vsup[:, :, 0]) + fy_[..., None] * (
            vsup[:, :, 3] - vsup[:, :, 2]
        )
        dvy = (1 - fx_)[..., None] * (vsup[:, :, 2] - vsup[:, :, 0]) + fx_[..., None] * (
            vsup[:, :, 3] - vsup[:, :, 1]
        )
        ddx = (1 - fy_) * (dsup[..., 1] - dsup[..., 0]) + fy_ * (dsup[..., 3] - dsup[..., 2])
        ddy = (1 - fx_) * (dsup[..., 2] - dsup[..., 0]) + fx_ * (dsup[..., 3] - dsup[..., 1])
        dds = ddx * dqx + ddy * dqy
        dwarped = dvx * dqx[..., None] + dvy * dqy[..., None]
        dpd = dds * c / Zs + ds / Zs - ds * c * az / Z2
        dsupport = wts * (c / Zs)[..., None]

        inv = ~ok
        dq = np.stack([dqx, dqy], axis=-1)
        dq[inv] = 0.0
        dwarped[inv] = 0.0
        dpd[inv] = 0.0
        dsupport[inv] = 0.0
        jac = WarpJacobians(dq, dwarped, dpd, dsupport, np.where(ok[..., None], idx, 0))

    return WarpResult(warped, pd, ok, coords, jac)


def backward_warp_jacobians(*args, **kwargs) -> WarpJacobians:
    """Analytic depth derivatives of :func:`backward_warp` (same arguments)."""
    kwargs["jacobians"] = True
    return backward_warp(*args, **kwargs).jacobians


def forward_splat_depth(
    depth_j: np.ndarray,
    intr_j: Intrinsics,
    pose_j: Pose,
    intr_i: Intrinsics,
    pose_i: Pose,
) -> tuple[np.ndarray, np.ndarray]:
    """Forward-project source depth into view i with nearest-pixel z-buffering.

    Returns ``(depth, valid)`` at the resolution of ``intr_i``; pixels hit by
    no source point are 0 and invalid.
    """
    depth_j = np.asarray(depth_j, dtype=np.float64)
    H, W = intr_i.height, intr_i.width
    rel = relative_pose(pose_j, pose_i)
    u, v = pixel_grid(*depth_j.shape)
    m = depth_j > 0
    d = depth_j[m]
    X = np.stack([(u[m] - intr_j.cx) * d / intr_j.fx, (v[m] - intr_j.cy) * d / intr_j.fy, d], axis=-1)
    X = rel.transform(X)
    z = X[:, 2]
    front = z > 0
    X, z = X[front], z[front]
    qx = np.rint(intr_i.fx * X[:, 0] / z + intr_i.cx)
    qy = np.rint(intr_i.fy * X[:, 1] / z + intr_i.cy)
    inside = (qx >= 0) & (qx <= W - 1) & (qy >= 0) & (qy <= H - 1)
    flat = qy[inside].astype(np.intp) * W + qx[inside].astype(np.intp)
    zbuf = np.full(H * W, np.inf)
    np.minimum.at(zbuf, flat, z[inside])
    valid = np.isfinite(zbuf)
    out = np.where(valid, zbuf, 0.0).reshape(H, W)
    return out, valid.reshape(H, W)

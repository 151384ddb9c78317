"""Analytic test scenes with exact depth, plus controlled depth corruption."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Intrinsics, Pose, pixel_grid
from .deformation import default_grid_shape, upsample_scale
from .frame import FrameRecord
from .io import build_sequence, working_size

CORRUPTION_MODES = ("global_scale", "spline_field", "noise")


@dataclass
class Plane:
    """Points x with ``normal . x = offset``."""

    normal: np.ndarray
    offset: float

    def intersect(self, origin, dirs):
        n = np.asarray(self.normal, dtype=np.float64)
        den = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (self.offset - origin @ n) / den
        return np.where(np.abs(den) > 1e-12, s, np.inf)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float

    def intersect(self, origin, dirs):
        oc = origin - np.asarray(self.center, dtype=np.float64)
        a = np.einsum("...k,...k->...", dirs, dirs)
        b = 2.0 * dirs @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - 4 * a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        s = (-b - root) / (2 * a)
        s2 = (-b + root) / (2 * a)
        s = np.where(s > 0, s, s2)
        return np.where(disc >= 0, s, np.inf)


class ValueNoise:
    """Seeded multi-octave 3-D value noise in [0, 1], one field per channel."""

    def __init__(self, seed: int, base_cell: float = 0.4, octaves: int = 3, channels: int = 3):
        rng = np.random.default_rng(seed)
        self.perm = rng.permutation(256)
        self.table = rng.random((channels, 256))
        self.offsets = rng.uniform(0, 100, (channels, 3))
        self.base_cell = base_cell
        self.octaves = octaves

    def _hash(self, ix, iy, iz):
        p = self.perm
        return p[(p[(p[ix & 255] + iy) & 255] + iz) & 255]

    def _octave(self, X, ch):
        g = np.floor(X)
        f = X - g
        f = f * f * (3 - 2 * f)
        i = g.astype(np.int64)
        out = 0.0
        for dx in (0, 1):
            wx = f[..., 0] if dx else 1 - f[..., 0]
            for dy in (0, 1):
                wy = f[..., 1] if dy else 1 - f[..., 1]
                for dz in (0, 1):
                    wz = f[..., 2] if dz else 1 - f[..., 2]
                    h = self._hash(i[..., 0] + dx, i[..., 1] + dy, i[..., 2] + dz)
                    out = out + wx * wy * wz * self.table[ch][h]
        return out

    def __call__(self, points: np.ndarray) -> np.ndarray:
        chans = []
        for ch in range(self.table.shape[0]):
            acc, norm = 0.0, 0.0
            for o in range(self.octaves):
                amp = 0.5**o
                acc = acc + amp * self._octave(points / (self.base_cell * 0.5**o) + self.offsets[ch], ch)
                norm += amp
            chans.append(acc / norm)
        return np.stack(chans, axis=-1)


def look_at(center, target, down=(0.0, 1.0, 0.0)) -> Pose:
    """Camera-from-world pose at ``center`` looking at ``target`` (camera y points down)."""
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross(down, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R_wc = np.stack([x, y, z], axis=1)
    return Pose(R_wc.T, -R_wc.T @ center)


@dataclass
class SyntheticScene:
    primitives: list
    poses: list[Pose]
    intrinsics: Intrinsics
    seed: int = 0
    texture: ValueNoise = field(init=False)

    def __post_init__(self):
        self.texture = ValueNoise(self.seed)

    @property
    def num_frames(self) -> int:
        return len(self.poses)

    def render(self, index: int) -> FrameRecord:
        """Ray-cast frame ``index``; ``depth0`` holds the exact depth (0 on misses)."""
        if not 0 <= index < self.num_frames:
            raise IndexError(f"frame {index} out of range")
        intr, pose = self.intrinsics, self.poses[index]
        u, v = pixel_grid(intr.height, intr.width)
        rays = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)
        dirs = rays @ pose.rotation  # R^T applied to each ray
        origin = pose.center()
        hits = np.stack([p.intersect(origin, dirs) for p in self.primitives])
        hits = np.where(hits > 1e-9, hits, np.inf)
        s = hits.min(axis=0)
        valid = np.isfinite(s)
        depth = np.where(valid, s, 0.0)  # rays have unit z, so the ray parameter is depth
        points = origin + dirs * np.where(valid, s, 0.0)[..., None]
        image = np.where(valid[..., None], self.texture(points), 0.0)
        return FrameRecord(index, image, depth, intr, pose, None, f"{index:06d}")


def default_scene(
    num_frames: int = 64,
    height: int = 120,
    width: int = 160,
    seed: int = 0,
    wall_depth: float = 3.2,
    orbit_radius: float = 0.5,
) -> SyntheticScene:
    """Room corner (back wall, floor, left wall) with shallow spherical bumps.

    Bumps are sphere caps whose centers lie behind the surface they sit on,
    so depth is continuous in every view and occlusion-free. The camera
    circles a fixation point on the back wall.
    """
    f = 0.875 * width
    intr = Intrinsics(f, f, width / 2.0, height / 2.0, width, height)
    zw = wall_depth
    prims = [
        Plane(np.array([0.0, 0.0, 1.0]), zw),
        Plane(np.array([0.0, 1.0, 0.0]), 0.9),
        Plane(np.array([1.0, 0.0, 0.0]), -1.6),
        Sphere(np.array([-0.5, -0.25, zw + 0.6]), 0.8),
        Sphere(np.array([0.65, 0.15, zw + 0.45]), 0.6),
        Sphere(np.array([0.1, 1.4, 0.6 * zw]), 0.6),
    ]
    target = np.array([0.0, 0.1, zw])
    poses = []
    for k in range(num_frames):
        a = 2 * np.pi * k / max(num_frames, 1)
        c = orbit_radius * np.array([np.sin(a), 0.3 * np.sin(2 * a), 0.4 * (1 - np.cos(a))])
        poses.append(look_at(c + np.array([0.0, -0.05, -0.2]), target))
    return SyntheticScene(prims, poses, intr, seed)


def corrupt_depth(
    gt: np.ndarray,
    mode: str,
    rng: np.random.Generator,
    grid_shape=None,
    ref_shape=None,
    pixel_scale: float = 1.0,
    knot_sigma: float = 0.1,
    noise_sigma: float = 0.05,
    scale_range=(0.5, 2.0),
):
    """Corrupt ground-truth depth; returns ``(depth0, true_scale, true_log_scale)``.

    ``gt = depth0 * true_scale`` on valid pixels except in ``noise`` mode, which
    adds per-pixel lognormal jitter on top of a spline field. The spline is
    anchored like the model's (``ref_shape``/``pixel_scale``), so it is
    exactly representable.
    """
    if mode not in CORRUPTION_MODES:
        raise ValueError(f"unknown corruption mode {mode!r}")
    H, W = gt.shape
    grid_shape = grid_shape or default_grid_shape(H, W)
    lo, hi = np.log(scale_range[0]), np.log(scale_range[1])
    l_true = np.full(grid_shape, rng.uniform(lo, hi))
    if mode != "global_scale":
        l_true = l_true + rng.normal(0.0, knot_sigma, grid_shape)
    S = upsample_scale(l_true, H, W, ref_shape=ref_shape, pixel_scale=pixel_scale)
    d0 = np.where(gt > 0, gt / S, 0.0)
    if mode == "noise":
        d0 = d0 * np.exp(rng.normal(0.0, noise_sigma, gt.shape))
    return d0, S, l_true


@dataclass
class SyntheticSequence:
    scene: SyntheticScene
    images: list[np.ndarray]
    gt: list[np.ndarray]
    depth0: list[np.ndarray]
    true_scale: list[np.ndarray]
    true_log_scale: list[np.ndarray]
    working_scale: float

    def to_sequence(self, keep_images: bool = False):
        return build_sequence(
            self.images, self.depth0, self.scene.intrinsics, self.scene.poses, self.working_scale, keep_images=keep_images
        )


def make_sequence(
    num_frames: int = 64,
    height: int = 120,
    width: int = 160,
    corruption: str = "spline_field",
    seed: int = 0,
    working_scale: float = 0.25,
    grid_shape=None,
    **corrupt_kw,
) -> SyntheticSequence:
    """Render a default scene and corrupt every frame's depth independently."""
    scene = default_scene(num_frames, height, width, seed)
    rng = np.random.default_rng(seed + 1)
    ref = (working_size(height, working_scale), working_size(width, working_scale))
    grid_shape = grid_shape or default_grid_shape(height, width)
    images, gts, d0s, Ss, ls = [], [], [], [], []
    for k in range(num_frames):
        fr = scene.render(k)
        d0, S, l_true = corrupt_depth(fr.depth0, corruption, rng, grid_shape, ref, working_scale, **corrupt_kw)
        images.append(fr.image)
        gts.append(fr.depth0)
        d0s.append(d0)
        Ss.append(S)
        ls.append(l_true)
    return SyntheticSequence(scene, images, gts, d0s, Ss, ls, working_scale)

"""Sequence loading, resampling to the working scale, and output writing.

File layouts (all little-endian):

* float depth ``.dep``: ``b"DEPF"``, uint32 H, uint32 W, then H*W float64 row-major.
* feature map ``.feat``: ``b"FEAT"``, uint32 H, W, C, uint32 dtype code
  (0 float32, 1 float16, 2 float64), then H*W*C values row-major.
* 16-bit PNG depth: raw value / divisor = meters, 0 = invalid.

A manifest is a JSON (or YAML) document::

    {"intrinsics": {"fx": .., "fy": .., "cx": .., "cy": .., "width": .., "height": ..},
     "depth_divisor": 5000.0, "working_scale": 0.25,
     "poses": {"path": "poses.txt", "format": "tum"},
     "frames": [{"image": "rgb/000.png", "depth": "depth/000.png", "features": null}, ...]}

Paths are relative to the manifest's directory.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from PIL import Image
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .camera import Intrinsics, Pose
from .deformation import ScaleGridParams, apply_deformation, upsample_scale
from .errors import InvalidInputError, LoadError
from .frame import FrameRecord
from .objective import fallback_features

log = logging.getLogger(__name__)

DEPTH_MAGIC = b"DEPF"
FEATURE_MAGIC = b"FEAT"
_FEATURE_DTYPES = {0: "<f4", 1: "<f2", 2: "<f8"}
TUM_DEPTH_DIVISOR = 5000.0


# --- raw depth / feature files -------------------------------------------------


def write_depth_float(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth)
    H, W = depth.shape
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC + struct.pack("<II", H, W))
        fh.write(np.ascontiguousarray(depth, dtype="<f8").tobytes())


def read_depth_float(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != DEPTH_MAGIC or len(data) < 12:
        raise LoadError(f"{path}: not a float depth file")
    H, W = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 8 * H * W:
        raise LoadError(f"{path}: truncated float depth file")
    return np.frombuffer(data, dtype="<f8", offset=12).reshape(H, W).astype(np.float64)


def write_depth_png(path, depth: np.ndarray, divisor: float) -> int:
    """Write 16-bit PNG depth; returns the number of pixels clamped at 65535."""
    raw = np.rint(np.where(depth > 0, depth, 0.0) * divisor)
    clamped = int((raw > 65535).sum())
    if clamped:
        log.warning("%s: %d depth values exceed the 16-bit range and were clamped", path, clamped)
    Image.fromarray(np.clip(raw, 0, 65535).astype(np.uint16)).save(path)
    return clamped


def read_depth_png(path, divisor: float) -> np.ndarray:
    raw = np.asarray(Image.open(path))
    if raw.ndim != 2:
        raise LoadError(f"{path}: depth PNG must be single-channel")
    return raw.astype(np.float64) / divisor


def read_depth(path, divisor: float = TUM_DEPTH_DIVISOR) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"missing depth file: {path}")
    if path.suffix.lower() == ".png":
        return read_depth_png(path, divisor)
    if path.suffix.lower() == ".npy":
        return np.load(path).astype(np.float64)
    return read_depth_float(path).astype(np.float64)


def write_features(path, features: np.ndarray, dtype_code: int = 0) -> None:
    H, W, C = features.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<IIII", H, W, C, dtype_code))
        fh.write(np.ascontiguousarray(features, dtype=_FEATURE_DTYPES[dtype_code]).tobytes())


def read_features(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_MAGIC or len(data) < 20:
        raise LoadError(f"{path}: not a feature file")
    H, W, C, code = struct.unpack("<IIII", data[4:20])
    if code not in _FEATURE_DTYPES:
        raise LoadError(f"{path}: unknown feature dtype code {code}")
    dt = np.dtype(_FEATURE_DTYPES[code])
    if len(data) != 20 + dt.itemsize * H * W * C:
        raise LoadError(f"{path}: truncated feature file")
    return np.frombuffer(data, dtype=dt, offset=20).reshape(H, W, C).astype(np.float64)


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"missing image file: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_image(path, image: np.ndarray) -> None:
    Image.fromarray(np.clip(np.rint(image * 255), 0, 255).astype(np.uint8)).save(path)


# --- trajectories --------------------------------------------------------------


def _quat_pose(t, q, where: str) -> Pose:
    norm = np.linalg.norm(q)
    if norm == 0:
        raise LoadError(f"{where}: zero quaternion")
    if abs(norm - 1.0) > 1e-3:
        warnings.warn(f"{where}: quaternion norm {norm:.6f}, renormalizing")
    R = Rotation.from_quat(q / norm).as_matrix()
    return Pose(R, t)


def load_trajectory(path, fmt: str = "tum", convention: str | None = None):
    """Read poses and return them camera-from-world, with timestamps (or None).

    ``tum``: lines ``timestamp tx ty tz qx qy qz qw`` holding world-from-camera
    poses. ``matrix4x4``: 16 numbers per line, a row-major 4x4 matrix in the
    given ``convention`` (default camera_from_world).
    """
    path = Path(path)
    if not path.exists():
        raise LoadError(f"missing trajectory file: {path}")
    if fmt == "tum":
        convention = convention or "world_from_camera"
    elif fmt == "matrix4x4":
        convention = convention or "camera_from_world"
    else:
        raise LoadError(f"unknown trajectory format {fmt!r}")
    if convention not in ("world_from_camera", "camera_from_world"):
        raise LoadError(f"unknown pose convention {convention!r}")
    poses, stamps = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{path}:{lineno}"
        try:
            nums = [float(x) for x in line.replace(",", " ").split()]
        except ValueError:
            raise LoadError(f"{where}: malformed line") from None
        if fmt == "tum":
            if len(nums) != 8:
                raise LoadError(f"{where}: expected 8 values, got {len(nums)}")
            stamps.append(nums[0])
            pose = _quat_pose(np.array(nums[1:4]), np.array(nums[4:8]), where)
        else:
            if len(nums) != 16:
                raise LoadError(f"{where}: expected 16 values, got {len(nums)}")
            try:
                pose = Pose.from_matrix(np.array(nums).reshape(4, 4))
            except InvalidInputError as exc:
                raise LoadError(f"{where}: {exc}") from None
        poses.append(pose.inverse() if convention == "world_from_camera" else pose)
    return poses, (stamps if fmt == "tum" else None)


def write_trajectory_tum(path, poses: list[Pose], timestamps=None) -> None:
    """Write camera-from-world poses as a TUM (world-from-camera) trajectory."""
    timestamps = timestamps if timestamps is not None else range(len(poses))
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for ts, pose in zip(timestamps, poses):
        inv = pose.inverse()
        q = Rotation.from_matrix(inv.rotation).as_quat()
        vals = [float(ts), *inv.translation, *q]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


# --- resampling ----------------------------------------------------------------


def working_size(n: int, scale: float) -> int:
    return max(1, int(round(n * scale)))


def _sample_index(n_out: int, n_in: int, scale: float) -> np.ndarray:
    return np.clip(np.rint(np.arange(n_out) / scale), 0, n_in - 1).astype(np.intp)


def _box_kernel(factor: float) -> np.ndarray:
    """Area weights of unit pixels overlapping a centered window of width ``factor``."""
    half = factor / 2.0
    K = int(math.ceil(half - 0.5 + 1e-12))
    k = np.arange(-K, K + 1)
    w = np.clip(np.minimum(k + 0.5, half) - np.maximum(k - 0.5, -half), 0.0, None)
    return w / w.sum()


def resize_depth_nearest(depth: np.ndarray, scale: float) -> np.ndarray:
    """Nearest-neighbour resampling: working pixel x reads original pixel x/scale."""
    if scale == 1.0:
        return np.asarray(depth, dtype=np.float64).copy()
    H, W = depth.shape
    rows = _sample_index(working_size(H, scale), H, scale)
    cols = _sample_index(working_size(W, scale), W, scale)
    return np.asarray(depth, dtype=np.float64)[np.ix_(rows, cols)]


def resize_area(image: np.ndarray, scale: float) -> np.ndarray:
    """Area-average resampling with the averaging window centered on each sample.

    Centering keeps color samples aligned with the depth samples of
    :func:`resize_depth_nearest` under linearly scaled intrinsics.
    """
    image = np.asarray(image, dtype=np.float64)
    if scale == 1.0:
        return image.copy()
    kernel = _box_kernel(1.0 / scale)
    out = ndimage.correlate1d(image, kernel, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="nearest")
    H, W = image.shape[:2]
    rows = _sample_index(working_size(H, scale), H, scale)
    cols = _sample_index(working_size(W, scale), W, scale)
    return out[rows][:, cols]


# --- sequences -----------------------------------------------------------------


@dataclass
class FrameEntry:
    image: str
    depth: str
    features: str | None = None


@dataclass
class SequenceManifest:
    intrinsics: Intrinsics
    frames: list[FrameEntry]
    poses: list[Pose]
    depth_divisor: float = TUM_DEPTH_DIVISOR
    working_scale: float = 0.25
    timestamps: list[float] | None = None
    root: Path = field(default_factory=Path)
    pose_file: str = ""
    pose_format: str = "tum"

    def path(self, rel: str) -> Path:
        return self.root / rel

    @property
    def names(self) -> list[str]:
        return [Path(f.image).stem for f in self.frames]


def load_manifest(path) -> SequenceManifest:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"missing manifest: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
        intr = Intrinsics(**{k: doc["intrinsics"][k] for k in ("fx", "fy", "cx", "cy", "width", "height")})
        frames = [FrameEntry(f["image"], f["depth"], f.get("features")) for f in doc["frames"]]
        pose_doc = doc["poses"]
    except (KeyError, TypeError, yaml.YAMLError, InvalidInputError) as exc:
        raise LoadError(f"{path}: malformed manifest ({exc})") from None
    root = path.parent
    poses, stamps = load_trajectory(root / pose_doc["path"], pose_doc.get("format", "tum"), pose_doc.get("convention"))
    if len(frames) < 2:
        raise LoadError(f"{path}: a sequence needs at least 2 frames, got {len(frames)}")
    if len(poses) != len(frames):
        raise LoadError(f"{path}: {len(frames)} frames but {len(poses)} poses in {pose_doc['path']}")
    if stamps is not None and np.any(np.diff(stamps) <= 0):
        raise LoadError(f"{root / pose_doc['path']}: timestamps are not strictly increasing")
    m = SequenceManifest(
        intr,
        frames,
        poses,
        float(doc.get("depth_divisor", TUM_DEPTH_DIVISOR)),
        float(doc.get("working_scale", 0.25)),
        stamps,
        root,
        pose_doc["path"],
        pose_doc.get("format", "tum"),
    )
    for f in frames:
        for rel in (f.image, f.depth, f.features):
            if rel is not None and not m.path(rel).exists():
                raise LoadError(f"{path}: referenced file does not exist: {m.path(rel)}")
    return m


def save_manifest(path, manifest: SequenceManifest) -> None:
    doc = {
        "intrinsics": dataclasses.asdict(manifest.intrinsics),
        "depth_divisor": manifest.depth_divisor,
        "working_scale": manifest.working_scale,
        "poses": {"path": manifest.pose_file, "format": manifest.pose_format},
        "frames": [dataclasses.asdict(f) for f in manifest.frames],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


@dataclass
class Sequence:
    """Frames at the working resolution plus what is needed at full resolution."""

    frames: list[FrameRecord]
    full_depth0: list[np.ndarray]
    full_intrinsics: Intrinsics
    working_scale: float
    names: list[str]
    full_images: list[np.ndarray] | None = None

    @property
    def working_shape(self) -> tuple[int, int]:
        return self.frames[0].shape

    def adjusted_depths(self, params: list[ScaleGridParams]) -> list[np.ndarray]:
        """Full-resolution depth: initial depth times the upsampled scale field."""
        H, W = self.full_intrinsics.height, self.full_intrinsics.width
        out = []
        for d0, p in zip(self.full_depth0, params):
            S = upsample_scale(p, H, W, ref_shape=self.working_shape, pixel_scale=self.working_scale)
            out.append(apply_deformation(d0, S))
        return out


def build_sequence(images, depth0s, intrinsics: Intrinsics, poses, scale: float = 0.25, features=None, names=None, keep_images=False) -> Sequence:
    """Resample full-resolution inputs to the working scale."""
    if not len(images) == len(depth0s) == len(poses):
        raise InvalidInputError("images, depths and poses differ in count")
    names = names or [f"{k:06d}" for k in range(len(images))]
    wi = intrinsics.scaled(scale)
    frames = []
    for k, (img, d0, pose) in enumerate(zip(images, depth0s, poses)):
        if img.shape[:2] != intrinsics.shape or d0.shape != intrinsics.shape:
            raise InvalidInputError(f"frame {names[k]}: resolution differs from intrinsics {intrinsics.shape}")
        img_w = resize_area(img, scale)
        d_w = resize_depth_nearest(d0, scale)
        feat = None if features is None else features[k]
        if feat is not None and feat.shape[:2] == intrinsics.shape:
            feat = resize_area(feat, scale)
        elif feat is not None and feat.shape[:2] != wi.shape:
            raise InvalidInputError(f"frame {names[k]}: feature map shape {feat.shape} fits neither resolution")
        if feat is None:
            feat = fallback_features(img_w)
        frames.append(FrameRecord(k, img_w, d_w, wi, pose, feat, names[k]))
    return Sequence(
        frames,
        [np.asarray(d, dtype=np.float64) for d in depth0s],
        intrinsics,
        scale,
        names,
        list(images) if keep_images else None,
    )


def load_sequence(manifest_path, working_scale: float | None = None, keep_images: bool = False):
    """Load a manifest and all frame data; returns ``(manifest, Sequence)``."""
    m = load_manifest(manifest_path)
    scale = m.working_scale if working_scale is None else working_scale
    images, depths, feats = [], [], []
    for f in m.frames:
        img = read_image(m.path(f.image))
        d = read_depth(m.path(f.depth), m.depth_divisor)
        if img.shape[:2] != m.intrinsics.shape or d.shape != m.intrinsics.shape:
            raise LoadError(
                f"{m.path(f.image)}: resolution {img.shape[:2]} / depth {d.shape} "
                f"does not match intrinsics {m.intrinsics.shape}"
            )
        images.append(img)
        depths.append(d)
        feats.append(read_features(m.path(f.features)) if f.features else None)
    use_feats = feats if any(x is not None for x in feats) else None
    try:
        seq = build_sequence(images, depths, m.intrinsics, m.poses, scale, use_feats, m.names, keep_images)
    except InvalidInputError as exc:
        raise LoadError(str(exc)) from None
    return m, seq


# --- outputs -------------------------------------------------------------------


LOG_COLUMNS = ["stage", "epoch", "total", "photo", "depth", "feat", "lr", "valid_pairs"]


def write_loss_log(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in history:
            w.writerow([repr(v) if isinstance(v, float) else v for v in dataclasses.astuple(row)])


def write_outputs(out_dir, names, depths, params, divisor: float = TUM_DEPTH_DIVISOR, history=(), summary=None) -> dict:
    """Write adjusted depths (float + 16-bit PNG), scale grids, loss log and summary."""
    if len(depths) == 0:
        raise InvalidInputError("nothing to write: empty sequence")
    if not (len(names) == len(depths) == len(params)):
        raise InvalidInputError("names, depths and params differ in count")
    out = Path(out_dir)
    try:
        for sub in ("depth", "depth_png", "scales"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    clamped = 0
    for name, d, p in zip(names, depths, params):
        write_depth_float(out / "depth" / f"{name}.dep", d)
        clamped += write_depth_png(out / "depth_png" / f"{name}.png", d, divisor)
        np.savetxt(out / "scales" / f"{name}.txt", p.log_scale, fmt="%.17g")
    write_loss_log(out / "loss_log.csv", history)
    info = {"frames": len(depths), "png_clamped": clamped, **(summary or {})}
    (out / "summary.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    return info

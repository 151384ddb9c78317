"""Command-line entry point: optimize, eval, synth, export-cloud."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .camera import pixel_grid
from .errors import DegenerateSequenceError, InvalidInputError, LoadError
from .io import (
    FrameEntry,
    SequenceManifest,
    load_sequence,
    read_depth,
    save_manifest,
    write_depth_float,
    write_image,
    write_outputs,
    write_trajectory_tum,
)
from .metrics import compute_metrics, format_report, median_scale_align
from .objective import FeatureConfig, LossConfig
from .schedule import OptimizeConfig, PairSchedule, StageConfig, optimize_sequence
from .synthetic import CORRUPTION_MODES, make_sequence

log = logging.getLogger("depthadjust")


@dataclass
class RunConfig:
    """Everything a run needs; defaults reproduce the reference settings."""

    manifest: str | None = None
    output: str = "out"
    stage1: StageConfig = field(default_factory=StageConfig.stage_one)
    stage2: StageConfig = field(default_factory=StageConfig.stage_two)
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    photo_weight: float = 1.0
    depth_weight: float = 1.0
    feat_weight: float = 1.0
    grid_shape: tuple[int, int] | None = None  # None: (8, 10) landscape, (10, 8) portrait
    working_scale: float = 0.25
    propagate: bool = True
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        if "stage1" in doc:
            doc["stage1"] = StageConfig.stage_one(**doc["stage1"])
        if "stage2" in doc:
            doc["stage2"] = StageConfig.stage_two(**doc["stage2"])
        if "feature" in doc:
            doc["feature"] = FeatureConfig(**doc["feature"])
        if doc.get("grid_shape") is not None:
            doc["grid_shape"] = tuple(doc["grid_shape"])
        return cls(**doc)

    def optimize_config(self) -> OptimizeConfig:
        return OptimizeConfig(
            stage1=self.stage1,
            stage2=self.stage2,
            loss=LossConfig(self.photo_weight, self.depth_weight, self.feat_weight, self.feature),
            grid_shape=self.grid_shape,
            propagate=self.propagate,
            seed=self.seed,
            threads=self.threads,
        )


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise LoadError(f"cannot read config {path}: {exc}") from None
    return RunConfig.from_dict(doc)


def _resolve(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    for key in ("seed", "threads"):
        if getattr(args, key, None) is not None:
            setattr(cfg, key, getattr(args, key))
    return cfg


def cmd_optimize(args) -> int:
    cfg = _resolve(args)
    if args.manifest:
        cfg.manifest = args.manifest
    if args.output:
        cfg.output = args.output
    if args.no_propagation:
        cfg.propagate = False
    if cfg.manifest is None:
        raise InvalidInputError("no manifest given (positional argument or config 'manifest')")
    phase = "load"
    try:
        manifest, seq = load_sequence(cfg.manifest, cfg.working_scale)
        sched = PairSchedule.build(len(seq.frames))
        print(f"pairs: |P_I|={len(sched.pairs_stage1)} |P_II|={len(sched.pairs_stage2)} |K|={len(sched.keyframes)}")
        if args.dry_run:
            return 0
        phase = "optimize"
        t0 = time.perf_counter()
        result = optimize_sequence(seq.frames, cfg.optimize_config())
        elapsed = time.perf_counter() - t0
        phase = "write"
        depths = seq.adjusted_depths(result.params)
        summary = {
            "manifest": str(cfg.manifest),
            "seed": cfg.seed,
            "stage_epochs": [s.epochs for s in result.stages],
            "stage_final_loss": [s.final_loss for s in result.stages],
            "pairs_stage1": len(sched.pairs_stage1),
            "pairs_stage2": len(sched.pairs_stage2),
            "keyframes": len(sched.keyframes),
            "warnings": result.warnings,
            "seconds": elapsed,
            "seconds_per_frame": elapsed / len(seq.frames),
        }
        info = write_outputs(
            cfg.output, seq.names, depths, result.params, manifest.depth_divisor, result.history, summary
        )
    except (LoadError, InvalidInputError, DegenerateSequenceError, FloatingPointError, OSError) as exc:
        print(f"error during {phase}: {exc}", file=sys.stderr)
        return 2
    for s in result.stages:
        print(f"stage {s.stage}: {s.epochs} epochs, final loss {s.final_loss:.6f}" + (" (skipped)" if s.skipped else ""))
    print(f"wrote {info['frames']} depth maps to {cfg.output} ({elapsed:.1f} s, {elapsed / len(seq.frames):.3f} s/frame)")
    return 0


def _depth_files(directory) -> dict[str, Path]:
    d = Path(directory)
    if not d.is_dir():
        raise LoadError(f"not a directory: {d}")
    return {p.stem: p for p in sorted(d.iterdir()) if p.suffix in (".dep", ".png", ".npy")}


def cmd_eval(args) -> int:
    try:
        preds = _depth_files(args.pred)
        gts = _depth_files(args.gt)
        names = sorted(set(preds) & set(gts))
        if not names:
            raise LoadError("no frames in common between prediction and ground-truth directories")
        P = [read_depth(preds[n], args.divisor) for n in names]
        G = [read_depth(gts[n], args.divisor) for n in names]
        scale = None
        if args.align:
            P, scale = median_scale_align(P, G)
        report = compute_metrics(P, G, pooled=args.pooled)
    except (LoadError, InvalidInputError) as exc:
        print(f"error during eval: {exc}", file=sys.stderr)
        return 2
    print(format_report(report))
    if scale is not None:
        print(f"alignment scale: {scale:.6f}")
    if args.report:
        doc = {
            "abs_diff": report.abs_diff,
            "abs_rel": report.abs_rel,
            "delta_125": report.delta_125,
            "valid_pixels": report.valid_pixel_count,
            "excluded_frames": report.excluded_frames,
            "alignment_scale": scale,
            "frames": [{"name": names[r["frame"]], **r} for r in report.rows()],
        }
        Path(args.report).write_text(json.dumps(doc, indent=1) + "\n")
    return 0


def cmd_synth(args) -> int:
    if args.corruption not in CORRUPTION_MODES:
        print(f"error: unknown corruption {args.corruption}", file=sys.stderr)
        return 2
    if args.frames < 2:
        print("error: need at least 2 frames", file=sys.stderr)
        return 2
    seed = _resolve(args).seed
    syn = make_sequence(args.frames, args.height, args.width, args.corruption, seed, args.working_scale)
    out = Path(args.output)
    for sub in ("rgb", "depth", "gt", "true_scale"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for k in range(args.frames):
        name = f"{k:06d}"
        write_image(out / "rgb" / f"{name}.png", syn.images[k])
        write_depth_float(out / "depth" / f"{name}.dep", syn.depth0[k])
        write_depth_float(out / "gt" / f"{name}.dep", syn.gt[k])
        np.savetxt(out / "true_scale" / f"{name}.txt", syn.true_log_scale[k], fmt="%.17g")
        entries.append(FrameEntry(f"rgb/{name}.png", f"depth/{name}.dep"))
    write_trajectory_tum(out / "poses.txt", syn.scene.poses, [0.1 * k for k in range(args.frames)])
    manifest = SequenceManifest(
        syn.scene.intrinsics, entries, syn.scene.poses, working_scale=args.working_scale, pose_file="poses.txt"
    )
    save_manifest(out / "manifest.json", manifest)
    print(f"wrote {args.frames}-frame {args.corruption} sequence to {out}")
    return 0


def write_ply(path, points: np.ndarray, colors: np.ndarray) -> None:
    """ASCII PLY with float positions and uchar colors."""
    colors = np.clip(np.rint(colors * 255), 0, 255).astype(np.uint8)
    header = (
        "ply\nformat ascii 1.0\n"
        f"element vertex {len(points)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    )
    with open(path, "w") as fh:
        fh.write(header)
        for p, c in zip(points, colors):
            fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}\n")


def cmd_export_cloud(args) -> int:
    try:
        manifest, seq = load_sequence(args.manifest, keep_images=True)
        depths = _depth_files(args.depth_dir)
        missing = [n for n in seq.names if n not in depths]
        if missing:
            raise LoadError(f"no adjusted depth for frames {missing[:3]}...")
    except (LoadError, InvalidInputError) as exc:
        print(f"error during export-cloud: {exc}", file=sys.stderr)
        return 2
    intr = seq.full_intrinsics
    u, v = pixel_grid(intr.height, intr.width)
    s = args.stride
    pts, cols = [], []
    for k in range(0, len(seq.names), args.frame_step):
        d = read_depth(depths[seq.names[k]], manifest.depth_divisor)[::s, ::s]
        m = d > 0
        X = np.stack([(u[::s, ::s][m] - intr.cx) * d[m] / intr.fx, (v[::s, ::s][m] - intr.cy) * d[m] / intr.fy, d[m]], -1)
        pts.append(manifest.poses[k].inverse().transform(X))
        cols.append(seq.full_images[k][::s, ::s][m])
    write_ply(args.output, np.concatenate(pts), np.concatenate(cols))
    print(f"wrote {sum(len(p) for p in pts)} points to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS lets the options appear before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="YAML/JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="depthadjust", description=__doc__, parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", parents=[common], help="adjust the depth maps of a sequence")
    p.add_argument("manifest", nargs="?")
    p.add_argument("-o", "--output")
    p.add_argument("--dry-run", action="store_true", help="print pair-set sizes and exit")
    p.add_argument("--no-propagation", action="store_true")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", parents=[common], help="depth metrics against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--align", action="store_true", help="median scale alignment per sequence")
    p.add_argument("--pooled", action="store_true", help="pool pixels instead of averaging frames")
    p.add_argument("--divisor", type=float, default=5000.0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic test sequence")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--height", type=int, default=120)
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--corruption", default="spline_field")
    p.add_argument("--working-scale", type=float, default=0.25)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-cloud", parents=[common], help="fuse adjusted depth into a PLY point cloud")
    p.add_argument("manifest")
    p.add_argument("depth_dir")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--frame-step", type=int, default=1)
    p.set_defaults(func=cmd_export_cloud)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidInputError, LoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

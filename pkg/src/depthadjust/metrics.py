"""Depth accuracy metrics and sequence-level median scale alignment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass
class FrameMetrics:
    abs_diff: float
    abs_rel: float
    delta_125: float
    valid_pixels: int


@dataclass
class MetricReport:
    abs_diff: float
    abs_rel: float  # percent
    delta_125: float  # percent
    valid_pixel_count: int
    frames: list[FrameMetrics | None] = field(default_factory=list)
    excluded_frames: int = 0

    def rows(self) -> list[dict]:
        out = []
        for k, fm in enumerate(self.frames):
            if fm is not None:
                out.append({"frame": k, **fm.__dict__})
        return out


def _valid(pred, gt):
    return (gt > 0) & (pred > 0) & np.isfinite(pred) & np.isfinite(gt)


def compute_metrics(preds, gts, pooled: bool = False) -> MetricReport:
    """abs diff [m], abs rel [%] and delta<1.25 [%] over pixels with gt > 0 and pred > 0.

    Sequence scores are the mean of per-frame scores, or pixel-pooled if
    ``pooled``. Frames without valid pixels are excluded and counted.
    """
    frames, excluded = [], 0
    sums = np.zeros(3)
    total = 0
    for pred, gt in zip(preds, gts):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        if pred.shape != gt.shape:
            raise InvalidInputError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
        m = _valid(pred, gt)
        n = int(m.sum())
        if n == 0:
            frames.append(None)
            excluded += 1
            continue
        p, g = pred[m], gt[m]
        err = np.abs(p - g)
        ratio = np.maximum(p / g, g / p)
        fs = np.array([err.sum(), (err / g).sum(), (ratio < 1.25).sum()])
        frames.append(FrameMetrics(fs[0] / n, 100 * fs[1] / n, 100 * fs[2] / n, n))
        sums += fs if pooled else fs / n
        total += n
    used = len(frames) - excluded
    if used == 0:
        return MetricReport(float("nan"), float("nan"), float("nan"), 0, frames, excluded)
    agg = sums / total if pooled else sums / used
    return MetricReport(float(agg[0]), float(100 * agg[1]), float(100 * agg[2]), total, frames, excluded)


def median_scale_align(preds, gts):
    """Rescale all predictions by one factor, the median of gt/pred over the sequence."""
    ratios = []
    for pred, gt in zip(preds, gts):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        m = _valid(pred, gt)
        ratios.append(gt[m] / pred[m])
    ratios = np.concatenate(ratios) if ratios else np.empty(0)
    if ratios.size == 0:
        raise InvalidInputError("no valid pixels to align")
    s = float(np.median(ratios))
    return [np.asarray(p, dtype=np.float64) * s for p in preds], s


def format_report(report: MetricReport) -> str:
    lines = [f"{'frame':>6} {'abs diff [m]':>13} {'abs rel [%]':>12} {'d<1.25 [%]':>11} {'pixels':>8}"]
    for k, fm in enumerate(report.frames):
        if fm is None:
            lines.append(f"{k:>6} {'excluded':>13}")
        else:
            lines.append(f"{k:>6} {fm.abs_diff:13.4f} {fm.abs_rel:12.3f} {fm.delta_125:11.3f} {fm.valid_pixels:8d}")
    lines.append(
        f"{'all':>6} {report.abs_diff:13.4f} {report.abs_rel:12.3f} {report.delta_125:11.3f} {report.valid_pixel_count:8d}"
    )
    return "\n".join(lines)

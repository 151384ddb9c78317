"""Frame-pair sets, Adam, the two-stage optimization driver and scale propagation."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .camera import forward_splat_depth
from .deformation import (
    ScaleGridParams,
    apply_deformation,
    default_grid_shape,
    knot_coordinates,
    pullback_gradient,
    upsample_scale,
)
from .errors import DegenerateSequenceError, InvalidInputError
from .frame import FrameRecord
from .objective import LossConfig, depth_to_scale_gradient, evaluate_pair

log = logging.getLogger(__name__)


def build_pairs(a: int, b: int, num_frames: int) -> list[tuple[int, int]]:
    """Unordered pairs ``{i, j}`` with ``|i - j| = 2**l``, ``i % 2**l == 0``, ``a <= l <= b``.

    Returned sorted, each as ``(min, max)``.
    """
    if not 0 <= a <= b:
        raise InvalidInputError(f"need 0 <= a <= b, got a={a}, b={b}")
    pairs = set()
    for level in range(a, b + 1):
        step = 2**level
        for i in range(0, num_frames, step):
            for j in (i - step, i + step):
                if 0 <= j < num_frames:
                    pairs.add((min(i, j), max(i, j)))
    return sorted(pairs)


def ordered(pairs) -> list[tuple[int, int]]:
    """Both orientations of every unordered pair."""
    out = []
    for i, j in pairs:
        out += [(i, j), (j, i)]
    return out


@dataclass
class PairSchedule:
    pairs_stage1: list[tuple[int, int]]
    pairs_stage2: list[tuple[int, int]]
    keyframes: list[int]
    num_frames: int

    @classmethod
    def build(cls, num_frames: int, stage1_levels=(3, 6), stage2_levels=(0, 2)) -> "PairSchedule":
        p1 = build_pairs(*stage1_levels, num_frames)
        p2 = build_pairs(*stage2_levels, num_frames)
        keys = sorted({k for pair in p1 for k in pair})
        return cls(p1, p2, keys, num_frames)


@dataclass
class StageConfig:
    lr0: float = 0.1
    gamma: float = 0.996
    max_epochs: int = 600
    patience_epochs: int = 40
    min_rel_improvement: float = 0.01
    batch_pairs: int = 128

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise InvalidInputError("gamma must lie in (0, 1)")
        if min(self.lr0, self.max_epochs, self.patience_epochs, self.batch_pairs) <= 0:
            raise InvalidInputError("stage settings must be positive")

    @classmethod
    def stage_one(cls, **kw) -> "StageConfig":
        return cls(**{"gamma": 0.996, "max_epochs": 600, "patience_epochs": 40, **kw})

    @classmethod
    def stage_two(cls, **kw) -> "StageConfig":
        return cls(**{"gamma": 0.96, "max_epochs": 60, "patience_epochs": 4, **kw})


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, x: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(x), np.zeros_like(x))


def adam_step(param, grad, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, name=None):
    """One bias-corrected Adam update; returns the new parameter array."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite gradient for frame {name}")
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * grad
    state.v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = state.m / (1 - beta1**state.t)
    v_hat = state.v / (1 - beta2**state.t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class EpochLog:
    stage: int
    epoch: int
    total: float
    photo: float
    depth: float
    feat: float
    lr: float
    valid_pairs: int


@dataclass
class StageResult:
    stage: int
    history: list[EpochLog] = field(default_factory=list)
    epochs: int = 0
    stopped_early: bool = False
    skipped: bool = False

    @property
    def final_loss(self) -> float:
        return self.history[-1].total if self.history else float("nan")


def current_depth(frame: FrameRecord, params: ScaleGridParams) -> np.ndarray:
    H, W = frame.shape
    return apply_deformation(frame.depth0, upsample_scale(params, H, W))


def accumulate_gradients(pairs, frames, params, cfg: LossConfig, pool=None):
    """Per-pair losses plus summed per-frame dL/dS over ``pairs`` at fixed parameters.

    Returns ``(evaluations, grad_sums, counts)``; frozen frames and skipped pairs
    contribute nothing to the sums.
    """
    involved = sorted({k for p in pairs for k in p})
    depth = {k: current_depth(frames[k], params[k]) for k in involved}

    def run(pair):
        i, j = pair
        return evaluate_pair(frames[i], frames[j], depth[i], depth[j], cfg)

    evals = list(pool.map(run, pairs)) if pool is not None else [run(p) for p in pairs]
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for (i, j), ev in zip(pairs, evals):
        if ev.skipped:
            continue
        for k, g in ((i, ev.grad_depth_i), (j, ev.grad_depth_j)):
            if params[k].frozen:
                continue
            gs = depth_to_scale_gradient(g, frames[k].depth0)
            sums[k] = sums[k] + gs if k in sums else gs
            counts[k] = counts.get(k, 0) + 1
    return evals, sums, counts


def run_stage(
    stage: int,
    frames: list[FrameRecord],
    params: list[ScaleGridParams],
    pairs,
    cfg: StageConfig,
    loss_cfg: LossConfig,
    rng: np.random.Generator,
    threads: int = 1,
) -> StageResult:
    """Optimize the unfrozen scale grids over ``pairs`` (unordered).

    Each epoch is a seeded shuffle of all ordered pairs, processed in batches
    of ``cfg.batch_pairs``; every batch ends with one Adam step per touched
    frame using its mean pair gradient. Stops after ``cfg.max_epochs`` or when
    the epoch loss has not beaten the best seen by ``min_rel_improvement`` for
    ``patience_epochs`` epochs. ``params`` is updated in place.
    """
    result = StageResult(stage)
    work = [p for p in ordered(pairs) if not (params[p[0]].frozen and params[p[1]].frozen)]
    if not work:
        result.skipped = True
        return result
    states = {k: AdamState.like(params[k].log_scale) for k in {x for p in work for x in p}}
    best = np.inf
    stale = 0
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for epoch in range(cfg.max_epochs):
            lr = cfg.lr0 * cfg.gamma**epoch
            order = rng.permutation(len(work))
            sums = np.zeros(4)
            valid_pairs = 0
            for start in range(0, len(order), cfg.batch_pairs):
                batch = [work[k] for k in order[start : start + cfg.batch_pairs]]
                evals, grads, counts = accumulate_gradients(batch, frames, params, loss_cfg, pool)
                for ev in evals:
                    if not ev.skipped:
                        sums += (ev.total, ev.photo, ev.depth, ev.feat)
                        valid_pairs += 1
                for k in sorted(grads):
                    g = pullback_gradient(grads[k] / counts[k], params[k])
                    params[k].log_scale = adam_step(
                        params[k].log_scale, g, states[k], lr, name=frames[k].name or k
                    )
            if valid_pairs == 0:
                raise DegenerateSequenceError(f"degenerate sequence: no valid pixels in any stage {stage} pair")
            mean = sums / valid_pairs
            result.history.append(EpochLog(stage, epoch, *mean, lr=lr, valid_pairs=valid_pairs))
            result.epochs = epoch + 1
            if mean[0] < best * (1 - cfg.min_rel_improvement):
                stale = 0
            else:
                stale += 1
            best = min(best, mean[0])
            log.debug("stage %d epoch %d loss %.6f lr %.5f", stage, epoch, mean[0], lr)
            if stale >= cfg.patience_epochs:
                result.stopped_early = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return result


def nearest_knot_index(H: int, W: int, grid_shape) -> np.ndarray:
    """Flat index of the nearest knot for every pixel (ties go to the lower knot)."""
    h, w = grid_shape
    ky = np.ceil(knot_coordinates(H, h) - 0.5).astype(np.intp)
    kx = np.ceil(knot_coordinates(W, w) - 0.5).astype(np.intp)
    return ky[:, None] * w + kx[None, :]


def median_pool(ratio: np.ndarray, valid: np.ndarray, grid_shape) -> tuple[np.ndarray, bool]:
    """Per-knot median of the valid ratios assigned to each knot.

    Knots without samples take the median of all valid ratios. Returns
    ``(pooled, ok)``; ``ok`` is False (and pooled all ones) when no ratio is valid.
    """
    h, w = grid_shape
    valid = valid & np.isfinite(ratio) & (ratio > 0)
    if not valid.any():
        return np.ones(grid_shape), False
    knot = nearest_knot_index(*ratio.shape, grid_shape)[valid]
    vals = ratio[valid]
    fill = np.median(vals)
    pooled = np.full(h * w, fill)
    order = np.lexsort((vals, knot))
    knot, vals = knot[order], vals[order]
    bounds = np.flatnonzero(np.diff(knot)) + 1
    for ks, vs in zip(np.split(knot, bounds), np.split(vals, bounds)):
        pooled[ks[0]] = np.median(vs)
    return pooled.reshape(h, w), True


def nearest_keyframe(i: int, keyframes) -> int:
    return min(keyframes, key=lambda k: (abs(k - i), k))


def propagate_scale(i: int, frames: list[FrameRecord], params: list[ScaleGridParams], keyframes) -> bool:
    """Initialize frame i's log-scale grid from its nearest keyframe.

    The keyframe's adjusted depth is splatted into view i and divided by the
    initial depth there; the ratio field is median-pooled onto the knots.
    Returns False (grid left untouched) if no ratio is valid.
    """
    if not keyframes:
        raise InvalidInputError("scale propagation needs at least one keyframe")
    j = nearest_keyframe(i, keyframes)
    fi, fj = frames[i], frames[j]
    dj = current_depth(fj, params[j])
    splat, valid = forward_splat_depth(dj, fj.intrinsics, fj.pose, fi.intrinsics, fi.pose)
    d0 = fi.depth0
    valid = valid & (d0 > 0)
    ratio = np.where(valid, splat / np.where(d0 > 0, d0, 1.0), 0.0)
    pooled, ok = median_pool(ratio, valid, params[i].shape)
    if not ok:
        log.warning("frame %s: no valid ratios for scale propagation, keeping l = 0", fi.name or i)
        return False
    params[i].log_scale = np.log(pooled)
    return True


@dataclass
class OptimizeConfig:
    stage1: StageConfig = field(default_factory=StageConfig.stage_one)
    stage2: StageConfig = field(default_factory=StageConfig.stage_two)
    loss: LossConfig = field(default_factory=LossConfig)
    grid_shape: tuple[int, int] | None = None
    propagate: bool = True
    seed: int = 0
    threads: int = 1


@dataclass
class OptimizationResult:
    params: list[ScaleGridParams]
    schedule: PairSchedule
    stages: list[StageResult]
    warnings: list[str] = field(default_factory=list)

    @property
    def history(self) -> list[EpochLog]:
        return [row for s in self.stages for row in s.history]


def optimize_sequence(frames: list[FrameRecord], cfg: OptimizeConfig = OptimizeConfig()) -> OptimizationResult:
    """Two-stage test-time optimization of per-frame scale grids.

    Stage I fits keyframes over the coarse pair set; non-keyframes are then
    initialized by scale propagation; stage II fits them over the fine pair
    set with keyframes frozen.
    """
    n = len(frames)
    if n < 2:
        raise InvalidInputError("need at least two frames")
    grid = cfg.grid_shape or default_grid_shape(*frames[0].shape)
    params = [ScaleGridParams.zeros(grid, k) for k in range(n)]
    sched = PairSchedule.build(n)
    rng = np.random.default_rng(cfg.seed)
    warnings = []
    keys = set(sched.keyframes)

    for k in range(n):
        params[k].frozen = k not in keys
    if sched.pairs_stage1:
        s1 = run_stage(1, frames, params, sched.pairs_stage1, cfg.stage1, cfg.loss, rng, cfg.threads)
    else:
        s1 = StageResult(1, skipped=True)
        warnings.append("empty keyframe set: stage I skipped")
        log.warning(warnings[-1])

    if cfg.propagate and sched.keyframes:
        for k in range(n):
            if k not in keys and not propagate_scale(k, frames, params, sched.keyframes):
                warnings.append(f"frame {k}: scale propagation found no valid ratios")

    for k in range(n):
        params[k].frozen = k in keys
    s2 = run_stage(2, frames, params, sched.pairs_stage2, cfg.stage2, cfg.loss, rng, cfg.threads)
    for p in params:
        p.frozen = False
    return OptimizationResult(params, sched, [s1, s2], warnings)

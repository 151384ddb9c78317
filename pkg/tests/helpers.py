"""Shared fixtures-by-hand: random frames and a central-difference oracle."""
import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from depthadjust.camera import Intrinsics, Pose
from depthadjust.frame import FrameRecord
from depthadjust.objective import fallback_features, pair_loss


def random_frame(rng, index=0, H=60, W=80, pose_sigma=(0.02, 0.05)):
    """Smooth random image and depth with a small random pose perturbation."""
    intr = Intrinsics(70.0, 70.0, W / 2 - 0.3, H / 2 + 0.2, W, H)
    img = ndimage.gaussian_filter(rng.random((H, W, 3)), (2, 2, 0))
    img = (img - img.min()) / (img.max() - img.min())
    depth = 2 + ndimage.gaussian_filter(rng.random((H, W)), 6) * 3
    R = Rotation.from_rotvec(rng.normal(0, pose_sigma[0], 3)).as_matrix()
    t = rng.normal(0, pose_sigma[1], 3)
    return FrameRecord(index, img, depth, intr, Pose(R, t), fallback_features(img))


def fd_gradient_check(frame_i, frame_j, l_i, l_j, cfg, h=1e-7):
    """Analytic vs central-difference gradient of the pair loss, both grids.

    Returns ``(bundle, max_rel, max_abs, n_bad)`` where an entry is bad when
    both its relative error exceeds 1e-3 and its absolute error exceeds 1e-7.
    """
    bundle = pair_loss(frame_i, frame_j, l_i, l_j, cfg)

    def total(a, b):
        return pair_loss(frame_i, frame_j, a, b, cfg, gradients=False).total

    max_rel = max_abs = 0.0
    n_bad = 0
    for which, grad in ((0, bundle.grad_i), (1, bundle.grad_j)):
        base = l_i if which == 0 else l_j
        fd = np.zeros_like(base)
        for k in np.ndindex(base.shape):
            lp, lm = base.copy(), base.copy()
            lp[k] += h
            lm[k] -= h
            if which == 0:
                fd[k] = (total(lp, l_j) - total(lm, l_j)) / (2 * h)
            else:
                fd[k] = (total(l_i, lp) - total(l_i, lm)) / (2 * h)
        err = np.abs(grad - fd)
        rel = err / np.maximum(np.maximum(np.abs(grad), np.abs(fd)), 1e-300)
        n_bad += int(((err > 1e-7) & (rel > 1e-3)).sum())
        max_abs = max(max_abs, float(err.max()))
        max_rel = max(max_rel, float(np.where(err > 1e-7, rel, 0).max()))
    return bundle, max_rel, max_abs, n_bad

"""Spatially varying depth scale: log-scale knot grid, bilinear spline, adjoint.

Knots are corner-aligned at the working resolution: knot (0, 0) sits on
pixel (0, 0) and knot (h-1, w-1) on pixel (H-1, W-1). Evaluating the field
at another resolution maps each pixel through the resampling factor first,
``x_working = x * pixel_scale``, so the same field is produced at every
resolution (pixels past the last knot take the edge value).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError

LANDSCAPE_GRID = (8, 10)
PORTRAIT_GRID = (10, 8)


def default_grid_shape(height: int, width: int) -> tuple[int, int]:
    """(8, 10) knots for landscape frames, (10, 8) for portrait."""
    return LANDSCAPE_GRID if width >= height else PORTRAIT_GRID


@dataclass
class ScaleGridParams:
    log_scale: np.ndarray
    frame_index: int = 0
    frozen: bool = False

    def __post_init__(self):
        self.log_scale = np.array(self.log_scale, dtype=np.float64)
        if self.log_scale.ndim != 2 or min(self.log_scale.shape) < 2:
            raise InvalidInputError(f"log-scale grid must be 2-D with >= 2 knots per axis, got {self.log_scale.shape}")
        if not np.all(np.isfinite(self.log_scale)):
            raise InvalidInputError(f"non-finite log scale for frame {self.frame_index}")

    @classmethod
    def zeros(cls, shape: tuple[int, int], frame_index: int = 0) -> "ScaleGridParams":
        return cls(np.zeros(shape), frame_index)

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_scale.shape


@lru_cache(maxsize=256)
def _axis_weights(n_pixels: int, n_knots: int, ref_pixels: int, pixel_scale: float) -> np.ndarray:
    if ref_pixels > 1:
        u = np.arange(n_pixels) * pixel_scale * (n_knots - 1) / (ref_pixels - 1)
    else:
        u = np.zeros(n_pixels)
    u = np.clip(u, 0.0, n_knots - 1)
    k0 = np.minimum(np.floor(u), n_knots - 2).astype(np.intp)
    f = u - k0
    M = np.zeros((n_pixels, n_knots))
    rows = np.arange(n_pixels)
    M[rows, k0] = 1.0 - f
    M[rows, k0 + 1] += f
    M.setflags(write=False)
    return M


def knot_coordinates(n_pixels: int, n_knots: int, ref_pixels: int | None = None, pixel_scale: float = 1.0) -> np.ndarray:
    """Fractional knot coordinate of every pixel along one axis."""
    M = _axis_weights(n_pixels, n_knots, ref_pixels or n_pixels, float(pixel_scale))
    return M @ np.arange(n_knots, dtype=np.float64)


def spline_basis(H: int, W: int, h: int, w: int, ref_shape=None, pixel_scale: float = 1.0):
    """Row and column interpolation matrices (H, h) and (W, w)."""
    ref_h, ref_w = ref_shape if ref_shape is not None else (H, W)
    return (
        _axis_weights(H, h, ref_h, float(pixel_scale)),
        _axis_weights(W, w, ref_w, float(pixel_scale)),
    )


def _log_scale(params) -> np.ndarray:
    return params.log_scale if isinstance(params, ScaleGridParams) else np.asarray(params, dtype=np.float64)


def upsample_scale(params, H: int, W: int, ref_shape=None, pixel_scale: float = 1.0) -> np.ndarray:
    """Scale map ``B(exp(l), H, W)``: exponentiate knots, then interpolate."""
    if H < 1 or W < 1:
        raise InvalidInputError("output size must be positive")
    log_scale = _log_scale(params)
    By, Bx = spline_basis(H, W, *log_scale.shape, ref_shape=ref_shape, pixel_scale=pixel_scale)
    return By @ np.exp(log_scale) @ Bx.T


def apply_deformation(depth0: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Scaled depth; non-positive initial depths stay invalid (0)."""
    depth0 = np.asarray(depth0, dtype=np.float64)
    if depth0.shape != np.shape(scale):
        raise InvalidInputError(f"depth {depth0.shape} and scale {np.shape(scale)} differ in shape")
    return np.where(depth0 > 0, depth0 * scale, 0.0)


def pullback_gradient(dL_dS: np.ndarray, params, ref_shape=None, pixel_scale: float = 1.0) -> np.ndarray:
    """Adjoint of :func:`upsample_scale`: per-pixel dL/dS to knot dL/dl."""
    log_scale = _log_scale(params)
    if isinstance(params, ScaleGridParams) and params.frozen:
        return np.zeros_like(log_scale)
    H, W = dL_dS.shape
    By, Bx = spline_basis(H, W, *log_scale.shape, ref_shape=ref_shape, pixel_scale=pixel_scale)
    return (By.T @ dL_dS @ Bx) * np.exp(log_scale)

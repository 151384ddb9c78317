from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .camera import Intrinsics, Pose


@dataclass
class FrameRecord:
    """One video frame as seen by the optimizer.

    ``image`` is (H, W, 3) RGB in [0, 1]; ``depth0`` the initial depth (0 where
    invalid); ``features`` an optional (H, W, C) feature map.
    """

    index: int
    image: np.ndarray
    depth0: np.ndarray
    intrinsics: Intrinsics
    pose: Pose
    features: np.ndarray | None = None
    name: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth0.shape

    @cached_property
    def values(self) -> np.ndarray:
        """Color and feature channels stacked for a single warp."""
        if self.features is None:
            return self.image
        return np.concatenate([self.image, self.features], axis=-1)

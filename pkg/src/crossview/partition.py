"""Dual square-ring partition: a centered box plus its complement ring."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PartitionSpec:
    """Center-to-whole width ratio of the partition."""

    ratio: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise ValueError(f"partition ratio must be in (0, 1), got {self.ratio}")


@dataclass(frozen=True)
class RegionBox:
    """Half-open row/column bounds of the center box."""

    row_start: int
    row_end: int
    col_start: int
    col_end: int

    @property
    def height(self) -> int:
        return self.row_end - self.row_start

    @property
    def width(self) -> int:
        return self.col_end - self.col_start

    @property
    def area(self) -> int:
        return self.height * self.width


def _side(ratio: float, dim: int) -> int:
    # round-half-up keeps the rule consistent with the LUT quantization
    return math.floor(ratio * dim + 0.5)


def center_box(height: int, width: int, spec: PartitionSpec = PartitionSpec()) -> RegionBox:
    """Centered box of side ~ratio*dim; ambiguous centering goes bottom/right."""
    if height < 2 or width < 2:
        raise ValueError(f"grid must be at least 2x2, got {height}x{width}")
    side_h = _side(spec.ratio, height)
    side_w = _side(spec.ratio, width)
    if side_h < 1 or side_w < 1:
        raise ValueError("center too small")
    row_start = (height - side_h + 1) // 2
    col_start = (width - side_w + 1) // 2
    return RegionBox(row_start, row_start + side_h, col_start, col_start + side_w)


def surround_mask(height: int, width: int, box: RegionBox) -> np.ndarray:
    """Boolean mask of the grid cells outside the center box."""
    mask = np.ones((height, width), dtype=bool)
    mask[box.row_start:box.row_end, box.col_start:box.col_end] = False
    return mask


def split_center_surround(fm, spec: PartitionSpec = PartitionSpec()):
    """Crop the center box from a (..., H, W) map and mask its complement.

    Works on numpy arrays and torch tensors alike; the mask is a numpy
    boolean (H, W) array.
    """
    height, width = fm.shape[-2], fm.shape[-1]
    box = center_box(height, width, spec)
    center = fm[..., box.row_start:box.row_end, box.col_start:box.col_end]
    return center, surround_mask(height, width, box)

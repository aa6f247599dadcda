"""Window partitioning, cyclic shifts and shifted-window masks.

Token ordering inside a window is row-major: token ``i * M + j`` of window
``r`` comes from pixel ``(row_r * M + i, col_r * M + j)``, where windows are
themselves numbered row-major over the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, crop, pad_reflect, reshape, roll, transpose

# additive stand-in for -inf in attention logits
MASK_VALUE = -1e9


@dataclass(frozen=True)
class RegionGrid:
    h_windows: int
    w_windows: int
    window_size: int
    feature_h: int
    feature_w: int
    pad_bottom: int = 0
    pad_right: int = 0

    @property
    def n_regions(self) -> int:
        return self.h_windows * self.w_windows

    @property
    def padded_h(self) -> int:
        return self.h_windows * self.window_size

    @property
    def padded_w(self) -> int:
        return self.w_windows * self.window_size

    @classmethod
    def for_shape(cls, h: int, w: int, window_size: int) -> RegionGrid:
        if window_size < 1 or h < 1 or w < 1:
            raise ValueError(f"invalid grid request: {h}x{w} with window {window_size}")
        m = window_size
        hw, ww = -(-h // m), -(-w // m)
        return cls(hw, ww, m, h, w, hw * m - h, ww * m - w)


def partition_windows(x: Tensor, window_size: int) -> tuple[Tensor, RegionGrid]:
    """Split ``x[H, W, C]`` into ``[n_regions, M*M, C]`` windows.

    Sizes that are not multiples of ``window_size`` are reflect-padded on the
    bottom and right first.
    """
    if x.ndim != 3:
        raise ShapeError(f"partition_windows expects [H, W, C], got {x.shape}")
    h, w, c = x.shape
    grid = RegionGrid.for_shape(h, w, window_size)
    m = window_size
    xp = pad_reflect(x, grid.pad_bottom, grid.pad_right)
    t = reshape(xp, (grid.h_windows, m, grid.w_windows, m, c))
    t = transpose(t, (0, 2, 1, 3, 4))
    return reshape(t, (grid.n_regions, m * m, c)), grid


def merge_windows(windows: Tensor, grid: RegionGrid) -> Tensor:
    """Inverse of :func:`partition_windows`, cropping any padding."""
    m = grid.window_size
    if windows.ndim != 3 or windows.shape[:2] != (grid.n_regions, m * m):
        raise ShapeError(f"merge_windows: {windows.shape} inconsistent with {grid}")
    c = windows.shape[2]
    t = reshape(windows, (grid.h_windows, grid.w_windows, m, m, c))
    t = transpose(t, (0, 2, 1, 3, 4))
    t = reshape(t, (grid.padded_h, grid.padded_w, c))
    if grid.pad_bottom or grid.pad_right:
        t = crop(t, (slice(0, grid.feature_h), slice(0, grid.feature_w)))
    return t


def cyclic_shift(x: Tensor, dy: int, dx: int) -> Tensor:
    """Roll ``x[H, W, C]`` by ``(dy, dx)`` on the torus (``np.roll`` convention)."""
    return roll(roll(x, dy, axis=0), dx, axis=1)


def region_labels(grid: RegionGrid, shift: int) -> np.ndarray:
    """Label each pixel of the padded map by the pre-shift region it came from."""
    m = grid.window_size
    labels = np.zeros((grid.padded_h, grid.padded_w), dtype=np.int64)
    if shift == 0:
        return labels
    bands = (slice(0, -m), slice(-m, -shift), slice(-shift, None))
    cnt = 0
    for hs in bands:
        for ws in bands:
            labels[hs, ws] = cnt
            cnt += 1
    return labels


def shift_attention_mask(grid: RegionGrid, shift: int) -> np.ndarray:
    """Additive ``[n_regions, M*M, M*M]`` mask for shifted-window attention.

    Pairs of tokens that land in the same window only because of the cyclic
    shift get :data:`MASK_VALUE`; every other entry is zero.
    """
    m = grid.window_size
    if not 0 <= shift < m:
        raise ValueError(f"shift {shift} outside [0, {m})")
    labels = region_labels(grid, shift)
    win = labels.reshape(grid.h_windows, m, grid.w_windows, m).transpose(0, 2, 1, 3)
    win = win.reshape(grid.n_regions, m * m)
    diff = win[:, :, None] != win[:, None, :]
    return np.where(diff, MASK_VALUE, 0.0)

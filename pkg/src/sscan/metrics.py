"""PSNR and SSIM following the usual super-resolution benchmark conventions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d


@dataclass(frozen=True)
class ImageU8:
    """8-bit image held as a ``[H, W, channels]`` uint8 array (RGB order)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim == 2:
            p = p[:, :, None]
        if p.ndim != 3 or p.shape[2] not in (1, 3):
            raise ValueError(f"ImageU8 needs [H, W, 1|3] samples, got shape {p.shape}")
        if p.dtype != np.uint8:
            if p.size and (p.min() < 0 or p.max() > 255 or not np.all(p == np.round(p))):
                raise ValueError("ImageU8 samples must be integers in [0, 255]")
            p = p.astype(np.uint8)
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def to_float(self) -> np.ndarray:
        """``[C, H, W]`` float64 in ``[0, 1]``."""
        return self.pixels.transpose(2, 0, 1).astype(np.float64) / 255.0

    @classmethod
    def from_float(cls, chw: np.ndarray) -> ImageU8:
        """Round-and-clip a ``[C, H, W]`` array in ``[0, 1]``."""
        arr = np.clip(np.round(np.asarray(chw) * 255.0), 0, 255).astype(np.uint8)
        return cls(arr.transpose(1, 2, 0))

    def to_rgb(self) -> ImageU8:
        return self if self.channels == 3 else ImageU8(np.repeat(self.pixels, 3, axis=2))


def rgb_to_y(pixels: np.ndarray) -> np.ndarray:
    """BT.601 luma of ``[H, W, 3]`` 8-bit RGB, on the 16..235 scale (float)."""
    rgb = pixels.astype(np.float64) / 255.0
    return rgb @ np.array([65.481, 128.553, 24.966]) + 16.0


def _prepare(a: ImageU8, b: ImageU8, crop_border: int, on_y: bool) -> tuple[np.ndarray, np.ndarray]:
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"image dimensions differ: {a.pixels.shape} vs {b.pixels.shape}")
    if crop_border < 0 or 2 * crop_border >= min(a.height, a.width):
        raise ValueError(f"crop_border {crop_border} too large for {a.height}x{a.width} image")
    x, y = a.pixels.astype(np.float64), b.pixels.astype(np.float64)
    if on_y and a.channels == 3:
        x, y = rgb_to_y(a.pixels)[:, :, None], rgb_to_y(b.pixels)[:, :, None]
    if crop_border:
        cb = crop_border
        x, y = x[cb:-cb, cb:-cb], y[cb:-cb, cb:-cb]
    return x, y


def psnr(a: ImageU8, b: ImageU8, crop_border: int = 0, on_y: bool = True) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    x, y = _prepare(a, b, crop_border, on_y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    half = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="nearest"), g, axis=1, mode="nearest")
    return out[half:-half, half:-half]


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    g = _gaussian_window()
    mu_x, mu_y = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x**2
    syy = _filter_valid(y * y, g) - mu_y**2
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a: ImageU8, b: ImageU8, crop_border: int = 0, on_y: bool = True) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    Only window positions fully inside the image contribute.  Multi-channel
    inputs (``on_y=False``) average the per-channel scores.
    """
    x, y = _prepare(a, b, crop_border, on_y)
    if x.shape[0] < 11 or x.shape[1] < 11:
        raise ValueError(f"SSIM needs at least 11x11 pixels after cropping, got {x.shape[:2]}")
    return float(np.mean([_ssim_channel(x[:, :, c], y[:, :, c]) for c in range(x.shape[2])]))

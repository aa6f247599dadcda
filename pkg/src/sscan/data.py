"""Synthetic training patches and on-disk LR/HR pair discovery."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .metrics import ImageU8


def box_downsample(hr: np.ndarray, scale: int) -> np.ndarray:
    """Area-average ``[C, H, W]`` by ``scale`` (H, W must be multiples)."""
    c, h, w = hr.shape
    if h % scale or w % scale:
        raise ValueError(f"{h}x{w} not divisible by scale {scale}")
    return hr.reshape(c, h // scale, scale, w // scale, scale).mean(axis=(2, 4))


def _pattern(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((3, size, size))
    base = rng.uniform(0.2, 0.8, size=3)
    for c in range(3):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(1.5, 5.0)
        stripes = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + rng.uniform(0, 2 * np.pi))
        ramp = rng.uniform(-0.2, 0.2) * (xx - 0.5) + rng.uniform(-0.2, 0.2) * (yy - 0.5)
        img[c] = base[c] + 0.2 * stripes + ramp
    return np.clip(img, 0.0, 1.0)


def make_toy_patches(n: int, lr_size: int = 32, scale: int = 2, seed: int = 0) -> list[tuple[ImageU8, ImageU8]]:
    """``n`` (LR, HR) pairs of smooth striped RGB textures; LR is the box-downsampled HR."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        hr = np.round(_pattern(rng, lr_size * scale) * 255) / 255
        lr = box_downsample(hr, scale)
        pairs.append((ImageU8.from_float(lr), ImageU8.from_float(hr)))
    return pairs


def find_pairs(directory) -> list[tuple[str, Path, Path]]:
    """``(stem, lr_path, hr_path)`` for every ``<stem>_lr.png``/``<stem>_hr.png`` pair.

    Raises ``FileNotFoundError`` naming the missing mate of any half pair.
    """
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d} is not a directory")
    stems: dict[str, dict[str, Path]] = {}
    for p in sorted(d.glob("*.png")):
        for tag in ("lr", "hr"):
            if p.name.endswith(f"_{tag}.png"):
                stems.setdefault(p.name[: -len(f"_{tag}.png")], {})[tag] = p
    out = []
    for stem, found in sorted(stems.items()):
        for tag in ("lr", "hr"):
            if tag not in found:
                raise FileNotFoundError(f"missing pair mate {d / f'{stem}_{tag}.png'}")
        out.append((stem, found["lr"], found["hr"]))
    return out

"""Routing overlays: which key windows a query window attends to."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from .metrics import ImageU8
from .model import ModelConfig, WeightStore, first_fgca_routing
from .tensor import Tensor

RED = (255, 0, 0)
WHITE = (255, 255, 255)


@dataclass(frozen=True)
class Box:
    row: int
    col: int
    top: int
    left: int
    size: int
    color: tuple[int, int, int]


def routing_boxes(img: ImageU8, cfg: ModelConfig, store: WeightStore, window: tuple[int, int],
                  mode: str = "infer") -> list[Box]:
    """Red box on the query window, then one white box per routed key window.

    Coordinates are in input pixels; windows are ``M x M`` tiles of the
    reflect-padded input.  Raises ``IndexError`` for a window outside the grid.
    """
    x = img.to_rgb() if cfg.in_channels == 3 else img
    routing, grid = first_fgca_routing(Tensor(x.to_float()), cfg, store, mode)
    row, col = window
    if not (0 <= row < grid.h_windows and 0 <= col < grid.w_windows):
        raise IndexError(f"window ({row}, {col}) outside the {grid.h_windows}x{grid.w_windows} grid")
    m = cfg.window_size
    boxes = [Box(row, col, row * m, col * m, m, RED)]
    for r in routing.topk_indices[row * grid.w_windows + col]:
        kr, kc = divmod(int(r), grid.w_windows)
        boxes.append(Box(kr, kc, kr * m, kc * m, m, WHITE))
    return boxes


def draw_boxes(img: ImageU8, boxes: list[Box], zoom: int = 1) -> ImageU8:
    """Outline ``boxes`` on an RGB copy of ``img``; the red query box is drawn last."""
    canvas = Image.fromarray(np.ascontiguousarray(img.to_rgb().pixels))
    if zoom > 1:
        canvas = canvas.resize((canvas.width * zoom, canvas.height * zoom), Image.NEAREST)
    draw = ImageDraw.Draw(canvas)
    for b in sorted(boxes, key=lambda b: b.color == RED):
        x0, y0 = b.left * zoom, b.top * zoom
        x1, y1 = x0 + b.size * zoom - 1, y0 + b.size * zoom - 1
        draw.rectangle((x0, y0, x1, y1), outline=b.color, width=max(1, zoom // 2))
    return ImageU8(np.asarray(canvas))

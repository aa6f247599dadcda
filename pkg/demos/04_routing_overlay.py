"""Draw which windows one query window routes to.

Red marks the query window, white the key windows picked by the first FGCA
layer.  Writes routing_overlay.png next to this script.
"""
from pathlib import Path

import numpy as np

from sscan.io import save_png
from sscan.metrics import ImageU8
from sscan.model import ModelConfig, init_weights
from sscan.viz import draw_boxes, routing_boxes

cfg = ModelConfig(embed_dim=8, n_sscan_blocks=1, n_fgca_blocks=1, window_size=4, num_heads=2, scale=2,
                  topk_train=4, topk_infer=6)
store = init_weights(cfg, seed=0)

# two textures: left half horizontal stripes, right half vertical stripes
yy, xx = np.mgrid[0:32, 0:32]
img = np.where(xx < 16, 128 + 100 * np.sin(yy / 1.5), 128 + 100 * np.sin(xx / 1.5))
img = ImageU8(np.repeat(img.round()[:, :, None], 3, axis=2).astype(np.uint8))

for window in ((1, 1), (6, 6)):
    boxes = routing_boxes(img, cfg, store, window)
    print(f"query {window}: keys", [(b.row, b.col) for b in boxes[1:]])

out = Path(__file__).with_name("routing_overlay.png")
save_png(draw_boxes(img, routing_boxes(img, cfg, store, (1, 1)), zoom=8), out)
print("wrote", out)

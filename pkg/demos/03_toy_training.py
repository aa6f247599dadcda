"""A few dozen Adam steps on synthetic stripes.

Uses a tiny network (8 channels, one block) so it runs in well under a
minute.  The acceptance run does the same for 500 steps at lr 2e-4.
"""
import numpy as np

from sscan.data import make_toy_patches
from sscan.metrics import ImageU8, psnr
from sscan.model import ModelConfig, count_params, init_weights
from sscan.optim import evaluate_pairs, train_toy

cfg = ModelConfig(embed_dim=8, n_sscan_blocks=1, n_fgca_blocks=1, window_size=4, num_heads=2, scale=2,
                  topk_train=4, topk_infer=8)
print("parameters:", count_params(cfg))

patches = make_toy_patches(6, lr_size=16, scale=2, seed=0)
held_out = make_toy_patches(2, lr_size=16, scale=2, seed=1)

before = evaluate_pairs(held_out, cfg.scale, cfg, init_weights(cfg, 0))
store, curve = train_toy(cfg, patches, iters=60, lr=2e-3, seed=0)
after = evaluate_pairs(held_out, cfg.scale, cfg, store)

for i in range(0, len(curve), 10):
    print(f"iter {i:3d}  L1 {curve[i]:.4f}")
print(f"final L1 {curve[-1]:.4f} ({curve[-1] / curve[0]:.0%} of start)")
print(f"held-out PSNR {before['psnr']:.2f} -> {after['psnr']:.2f} dB, SSIM {before['ssim']:.3f} -> {after['ssim']:.3f}")

# for scale: nearest-neighbour upscaling of the same LR patches.
# Sixty steps on six patches does not get the network past this yet.
nn = [np.repeat(np.repeat(lo.pixels, 2, 0), 2, 1) for lo, _ in held_out]
print("nearest-neighbour PSNR", np.mean([psnr(ImageU8(a), hi, crop_border=2) for a, (_, hi) in zip(nn, held_out)]).round(2))

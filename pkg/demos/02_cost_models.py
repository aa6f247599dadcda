"""Routing + attention FLOPs and peak memory, variable vs fixed windows.

The variable-window scheme keeps S2 regions whatever the image size, so each
region grows with H*W and attention cost grows with (H*W)^2.  Fixed M x M
windows keep per-window work constant and the cost grows linearly.
"""
from sscan.attention import AttentionConfig
from sscan.complexity import (
    OURS,
    PREV,
    find_crossover,
    measure_fgca_flops,
    parse_grid_spec,
    peak_attention_memory,
    sweep_costs,
)

rows = sweep_costs(parse_grid_spec("size=16,32,64,128,256,512;C=60;M=8;S2=64;k=4"))

print(f"{'H=W':>5} {'prev GFLOPs':>13} {'ours GFLOPs':>13} {'prev MiB':>10} {'ours MiB':>10}")
for prev, ours in zip(rows[0::2], rows[1::2]):
    print(f"{prev.dims['H']:>5} {prev.total_flops / 1e9:13.3f} {ours.total_flops / 1e9:13.3f} "
          f"{prev.peak_intermediate_bytes / 2**20:10.1f} {ours.peak_intermediate_bytes / 2**20:10.1f}")
print("fixed windows cheaper from H*W =", find_crossover(rows))

# memory at 512x512, and what block-wise evaluation would save
full = peak_attention_memory(PREV, 512, 512, 60, 64, 4) / peak_attention_memory(OURS, 512, 512, 60, 8, 4)
tiled = peak_attention_memory(OURS, 512, 512, 60, 8, 4, tiled=True)
print(f"512x512 peak memory ratio prev/ours: {full:.1f}x; ours tiled: {tiled / 2**20:.0f} MiB")

# the closed form against an instrumented forward pass
cfg = AttentionConfig(window_size=8, num_heads=6, head_dim=10, topk_infer=4)
for size in (32, 64):
    counts = measure_fgca_flops(cfg, size, size)
    print(f"measured at {size}x{size}:", counts)

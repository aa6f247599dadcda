"""FGCA next to plain global attention.

With k equal to the number of windows, every query window gathers every
key window, so FGCA must reproduce dense attention over the whole map.
Shrinking k then trades fidelity for cost.
"""
import numpy as np

from sscan.attention import AttentionConfig, fgca_forward
from sscan.reference import dense_attention_oracle
from sscan.tensor import Tensor

rng = np.random.default_rng(0)
H = W = 16
M, heads, d = 4, 2, 4
C = heads * d
n_windows = (H // M) * (W // M)

x = rng.normal(size=(H, W, C))
w = {f"{p}.weight": rng.normal(scale=0.5, size=(C, C)) for p in ("q", "k", "v", "proj")}
w.update({f"{p}.bias": rng.normal(scale=0.1, size=C) for p in ("q", "v", "proj")})
wt = {k: Tensor(v) for k, v in w.items()}

dense = dense_attention_oracle(x, w, heads)

# sweep k from "only the best window" up to "all windows"
print(f"{n_windows} windows of {M}x{M}")
print(" k   max |fgca - dense|")
for k in (1, 2, 4, 8, n_windows):
    cfg = AttentionConfig(window_size=M, num_heads=heads, head_dim=d, topk_train=k, topk_infer=k)
    y, routing = fgca_forward(Tensor(x), cfg, wt, mode="infer", return_routing=True)
    print(f"{k:2d}   {np.abs(y.data - dense).max():.3e}")

# which windows did window 0 pick at k=4?
cfg = AttentionConfig(window_size=M, num_heads=heads, head_dim=d, topk_train=4, topk_infer=4)
_, routing = fgca_forward(Tensor(x), cfg, wt, return_routing=True)
print("window 0 routes to", routing.topk_indices[0].tolist())
print("its adjacency row  ", np.round(routing.adjacency.data[0], 2).tolist())

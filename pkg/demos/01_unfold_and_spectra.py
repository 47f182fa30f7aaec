"""Mode-d unfolding and the spectral quality score, end to end on one tensor.

A 4D convolution weight can be flattened into a matrix along any of its four
dimensions.  The two that matter for channel search are mode 3 (rows = input
channels) and mode 4 (rows = output channels): each gives a spectrum whose
effective rank and conditioning summarize how much of the channel capacity
the layer actually uses.
"""

import numpy as np

from chansearch import Side, WeightTensor, layer_metric, refold, unfold

rng = np.random.default_rng(0)

# a toy 3x3 conv mapping 8 -> 16 channels
tensor = WeightTensor("conv", rng.standard_normal((3, 3, 8, 16)))
print(f"weight shape {tensor.shape}")

for mode, label in ((3, "input channels"), (4, "output channels")):
    mat = unfold(tensor, mode)
    print(f"mode-{mode} unfold ({label}): {mat.shape[0]} x {mat.shape[1]}")
    back = refold(mat, mode, tensor.shape)
    print(f"  refold restores the tensor bit-exactly: "
          f"{back.tobytes() == tensor.data.tobytes()}")

print()
print("spectral summaries (tau = 0.01):")
for side in (Side.IN, Side.OUT):
    s = layer_metric(tensor, side)
    print(f"  {side.value:>3}: N = {s.channel_size:2d}  N' = {s.n_eff:2d}  "
          f"r = {s.rank_ratio:.3f}  kappa = {s.kappa:6.2f}  QC = {s.qc:.4f}")

# a rank-starved layer scores lower: zero out most output channels
starved = tensor.data.copy()
starved[:, :, :, 4:] = 0.0
s = layer_metric(WeightTensor("starved", starved), Side.OUT)
print(f"\nsame layer with 12 dead output channels: N' = {s.n_eff}, "
      f"QC = {s.qc:.4f}  (capacity wasted, score drops)")

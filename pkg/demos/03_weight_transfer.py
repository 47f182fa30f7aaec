"""Carrying trained weights across a channel-size change.

Growth reflects the trailing rows of the unfolded matrix (the new channels
mirror the last ones learned); shrinkage keeps the top of the singular
spectrum, which is never worse than simply deleting channels.
"""

import numpy as np

from chansearch import ResizePlan, Side, WeightTensor, transfer
from chansearch.distill import expand, shrink

rng = np.random.default_rng(1)

mat = rng.standard_normal((4, 6))
print("expansion 4 -> 6 rows (reflection, boundary row first):")
grown = expand(mat, 6)
print(f"  rows 4..5 equal rows 3,2 reversed: "
      f"{np.array_equal(grown[4], mat[3]) and np.array_equal(grown[5], mat[2])}")

print("\nshrinkage 4 -> 2 rows keeps the dominant spectrum:")
shrunk = shrink(mat, 2)
sigmas = np.linalg.svd(mat, compute_uv=False)
truncation_err = np.sqrt((sigmas[2:] ** 2).sum())
deletion_err = np.linalg.norm(mat[2:])
print(f"  rank-2 reconstruction error {truncation_err:.4f} vs "
      f"row-deletion error {deletion_err:.4f} (never worse)")

# a full tensor transfer: grow the outputs, shrink the inputs
tensor = WeightTensor("conv", rng.standard_normal((3, 3, 8, 8)))
moved = transfer(
    tensor,
    plan_in=ResizePlan("conv", Side.IN, 8, 5),
    plan_out=ResizePlan("conv", Side.OUT, 8, 12),
)
print(f"\ntransfer {tensor.shape} -> {moved.shape} "
      "(outputs resized first, then inputs)")

"""Weight transfer across channel-size changes.

Growing a channel dimension reflects the trailing rows of the unfolded
matrix (boundary row included): for D = new - old extra rows, rows
old-1, old-2, ..., old-D are appended in that order.  Shrinking keeps the
dominant spectral content: with W = U S V^T, the reduced matrix is
U[:new, :new] @ S[:new, :new] @ V^T[:new, :], i.e. the top rows of the best
rank-`new` approximation.  Equal sizes pass the tensor through untouched.
"""

from dataclasses import dataclass

import numpy as np

from .graph import Side
from .tensorio import WeightTensor, refold, unfold


@dataclass(frozen=True)
class ResizePlan:
    """One channel-dimension change for one layer."""

    layer_id: str
    side: Side
    old_size: int
    new_size: int

    def __post_init__(self):
        if self.old_size < 1 or self.new_size < 1:
            raise ValueError(
                f"{self.layer_id}.{self.side.value}: sizes must be >= 1, "
                f"got {self.old_size} -> {self.new_size}"
            )
        if self.new_size > 2 * self.old_size:
            raise ValueError(
                f"{self.layer_id}.{self.side.value}: expansion "
                f"{self.old_size} -> {self.new_size} exceeds the 2x bound"
            )


def expand(matrix, new_rows):
    """Grow a matrix to `new_rows` rows by reflecting its trailing rows."""
    mat = np.asarray(matrix)
    rows = mat.shape[0]
    if not rows < new_rows:
        raise ValueError(f"expand needs new_rows > {rows}, got {new_rows}")
    if new_rows > 2 * rows:
        raise ValueError(
            f"cannot expand {rows} -> {new_rows}: reflection source exhausted"
        )
    extra = new_rows - rows
    return np.vstack([mat, mat[rows - extra:][::-1]])


def shrink(matrix, new_rows):
    """Reduce a matrix to `new_rows` rows, preserving the dominant bases."""
    mat = np.asarray(matrix)
    rows = mat.shape[0]
    if new_rows < 1:
        raise ValueError(f"shrink needs new_rows >= 1, got {new_rows}")
    if not new_rows < rows:
        raise ValueError(f"shrink needs new_rows < {rows}, got {new_rows}")
    u, s, vt = np.linalg.svd(np.asarray(mat, dtype=np.float64), full_matrices=False)
    rank = min(new_rows, s.size)
    reduced = u[:new_rows, :rank] @ (s[:rank, None] * vt[:rank])
    return reduced.astype(mat.dtype)


def resize_rows(matrix, new_rows):
    rows = np.asarray(matrix).shape[0]
    if new_rows == rows:
        return matrix
    if new_rows > rows:
        return expand(matrix, new_rows)
    return shrink(matrix, new_rows)


def transfer(tensor, plan_in=None, plan_out=None):
    """Resize a weight tensor per the given plans (OUT first, then IN).

    Returns the input tensor itself when both plans are absent or no-ops.
    """
    arr = tensor.data
    shape = list(arr.shape)
    changed = False
    for plan, side in ((plan_out, Side.OUT), (plan_in, Side.IN)):
        if plan is None:
            continue
        if plan.side is not side:
            raise ValueError(
                f"{tensor.layer_id}: plan for {plan.side.value} passed in the "
                f"{side.value} slot"
            )
        if plan.layer_id != tensor.layer_id:
            raise ValueError(
                f"plan targets {plan.layer_id!r} but tensor is {tensor.layer_id!r}"
            )
        axis = side.axis
        if plan.old_size != shape[axis]:
            raise ValueError(
                f"{tensor.layer_id}.{side.value}: plan expects old size "
                f"{plan.old_size} but tensor has {shape[axis]}"
            )
        if plan.new_size == plan.old_size:
            continue
        matrix = resize_rows(unfold(arr, side.mode), plan.new_size)
        shape[axis] = plan.new_size
        arr = refold(matrix, side.mode, shape)
        changed = True
    if not changed:
        return tensor
    return WeightTensor(tensor.layer_id, arr)

"""4D convolution weights, mode-d unfolding, and the on-disk weights container.

A weight tensor has shape (kernel_h, kernel_w, in_channels, out_channels).
Unfolding along mode d produces a 2D matrix whose row i collects every
element with index i along dimension d; columns run row-major over the
remaining dimensions in ascending dimension order.  refold() is the exact
inverse under this layout.

The container format is a directory holding one raw little-endian float32
blob per layer plus a `manifest.json` index.
"""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STORAGE_DTYPE = np.dtype("<f4")


class FormatError(Exception):
    """A weights container, blob, or tensor violates the on-disk contract."""


@dataclass
class WeightTensor:
    """A named 4D convolution weight, stored as float32.

    fc layers are represented as 1x1 convolutions, so this covers every
    weighted layer kind.
    """

    layer_id: str
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4:
            raise ValueError(
                f"layer {self.layer_id!r}: weight must be 4D, got shape {arr.shape}"
            )
        if any(s < 1 for s in arr.shape):
            raise ValueError(
                f"layer {self.layer_id!r}: all dimensions must be >= 1, got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"layer {self.layer_id!r}: weight contains NaN/Inf")
        self.data = np.ascontiguousarray(arr, dtype=np.float32)

    @property
    def shape(self):
        return tuple(int(s) for s in self.data.shape)


def _as4d(tensor):
    arr = tensor.data if isinstance(tensor, WeightTensor) else np.asarray(tensor)
    if arr.ndim != 4:
        raise ValueError(f"expected a 4D tensor, got shape {arr.shape}")
    return arr


def unfold(tensor, mode):
    """Flatten a 4D tensor to a 2D matrix with `mode`'s dimension as rows.

    mode is 1-based (1..4).  Column order is row-major over the remaining
    dimensions in ascending dimension order, which makes the operation a
    pure index permutation (bit-exact and invertible).
    """
    if mode not in (1, 2, 3, 4):
        raise ValueError(f"unfold mode must be in 1..4, got {mode!r}")
    arr = _as4d(tensor)
    return np.moveaxis(arr, mode - 1, 0).reshape(arr.shape[mode - 1], -1)


def refold(matrix, mode, shape):
    """Inverse of unfold: rebuild the 4D tensor of `shape` from a 2D matrix."""
    if mode not in (1, 2, 3, 4):
        raise ValueError(f"refold mode must be in 1..4, got {mode!r}")
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4 or any(s < 1 for s in shape):
        raise ValueError(f"target shape must be 4 positive ints, got {shape}")
    mat = np.asarray(matrix)
    if mat.ndim != 2:
        raise ValueError(f"expected a 2D matrix, got shape {mat.shape}")
    if mat.shape[0] != shape[mode - 1]:
        raise ValueError(
            f"matrix has {mat.shape[0]} rows but shape {shape} needs "
            f"{shape[mode - 1]} along mode {mode}"
        )
    rest = [shape[i] for i in range(4) if i != mode - 1]
    if mat.shape[1] != int(np.prod(rest)):
        raise ValueError(
            f"matrix has {mat.shape[1]} columns but shape {shape} needs "
            f"{int(np.prod(rest))} for mode {mode}"
        )
    return np.moveaxis(mat.reshape([shape[mode - 1]] + rest), 0, mode - 1)


def write_weights(tensors, dirpath):
    """Write a {layer_id: WeightTensor} map as a container directory."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    entries = []
    for layer_id, tensor in tensors.items():
        if "/" in layer_id or "\\" in layer_id:
            raise FormatError(f"layer id {layer_id!r} is not filesystem-safe")
        fname = f"{layer_id}.bin"
        blob = np.ascontiguousarray(tensor.data, dtype=STORAGE_DTYPE).tobytes()
        (dirpath / fname).write_bytes(blob)
        entries.append({"id": layer_id, "shape": list(tensor.shape), "file": fname})
    manifest = {"tensors": entries}
    (dirpath / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def read_weights(dirpath):
    """Read a container directory back into a {layer_id: WeightTensor} map.

    A directory without a manifest yields an empty map with a warning;
    every other inconsistency is a FormatError naming the offending layer.
    """
    dirpath = Path(dirpath)
    manifest_path = dirpath / "manifest.json"
    if not manifest_path.is_file():
        warnings.warn(f"no manifest.json under {dirpath}, returning empty weights map")
        return {}
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparseable manifest {manifest_path}: {exc}") from exc
    entries = manifest.get("tensors")
    if not isinstance(entries, list):
        raise FormatError(f"{manifest_path}: expected a top-level 'tensors' list")

    tensors = {}
    for entry in entries:
        layer_id = entry.get("id")
        if not isinstance(layer_id, str) or not layer_id:
            raise FormatError(f"{manifest_path}: tensor entry without a string id")
        if layer_id in tensors:
            raise FormatError(f"duplicate layer id {layer_id!r} in manifest")
        shape = entry.get("shape")
        if (
            not isinstance(shape, list)
            or len(shape) != 4
            or any(not isinstance(s, int) or s < 1 for s in shape)
        ):
            raise FormatError(f"layer {layer_id!r}: bad shape {shape!r} in manifest")
        blob_path = dirpath / entry.get("file", "")
        if not blob_path.is_file():
            raise FormatError(f"layer {layer_id!r}: missing blob {blob_path}")
        blob = blob_path.read_bytes()
        expected = int(np.prod(shape)) * STORAGE_DTYPE.itemsize
        if len(blob) != expected:
            raise FormatError(
                f"layer {layer_id!r}: blob is {len(blob)} bytes, expected {expected}"
            )
        arr = np.frombuffer(blob, dtype=STORAGE_DTYPE).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"layer {layer_id!r}: blob contains NaN/Inf")
        tensors[layer_id] = WeightTensor(layer_id, arr.copy())
    return tensors

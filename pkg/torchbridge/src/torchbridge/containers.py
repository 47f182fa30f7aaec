"""Engine interchange formats, written and read without importing the engine.

Graph JSON: {"nodes": [{"id", "kind", "weight_shape"?}], "edges": [[a, b]]}.
Weights container: a directory of row-major little-endian float32 blobs plus
a manifest listing {"id", "shape", "file"} per tensor, axes (kh, kw, in, out).
"""

import json
from pathlib import Path

import numpy as np

STORAGE_DTYPE = np.dtype("<f4")


def write_graph(graph_doc, path):
    Path(path).write_text(json.dumps(graph_doc, indent=2) + "\n")


def write_container(tensors, dirpath):
    """tensors: {layer_id: float32 ndarray in (kh, kw, in, out) order}."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    entries = []
    for layer_id, arr in tensors.items():
        blob = np.ascontiguousarray(arr, dtype=STORAGE_DTYPE)
        (dirpath / f"{layer_id}.bin").write_bytes(blob.tobytes())
        entries.append(
            {"id": layer_id, "shape": [int(s) for s in arr.shape], "file": f"{layer_id}.bin"}
        )
    (dirpath / "manifest.json").write_text(
        json.dumps({"tensors": entries}, indent=2) + "\n"
    )


def read_container(dirpath):
    dirpath = Path(dirpath)
    manifest = json.loads((dirpath / "manifest.json").read_text())
    tensors = {}
    for entry in manifest["tensors"]:
        blob = (dirpath / entry["file"]).read_bytes()
        arr = np.frombuffer(blob, dtype=STORAGE_DTYPE).reshape(entry["shape"])
        tensors[entry["id"]] = arr.copy()
    return tensors


def container_shapes(dirpath):
    manifest = json.loads((Path(dirpath) / "manifest.json").read_text())
    return {e["id"]: tuple(e["shape"]) for e in manifest["tensors"]}


# --- axis permutations ------------------------------------------------------
#
# torch conv weights are (out, in, kh, kw), linear weights (out, in); the
# engine stores everything as (kh, kw, in, out) 4D tensors.


def conv_to_engine(weight):
    return np.ascontiguousarray(weight.transpose(2, 3, 1, 0))


def conv_from_engine(arr):
    return np.ascontiguousarray(np.asarray(arr).transpose(3, 2, 0, 1))


def linear_to_engine(weight):
    return np.ascontiguousarray(weight.T)[None, None]


def linear_from_engine(arr):
    return np.ascontiguousarray(np.asarray(arr)[0, 0].T)

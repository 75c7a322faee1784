"""Writes torchvision VGG19 convolution weights in the native archive format."""

import json
import pathlib
import struct

import numpy as np

MAGIC = b"STEARCH1"
CONV_INDICES = (0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28)


def write_archive(path, tensors, meta=None):
    """`tensors` maps names to 4-D float arrays, stored as f32."""
    header = dict(meta or {})
    entries, blobs, offset = [], [], 0
    for name, array in tensors.items():
        a = np.ascontiguousarray(array, dtype="<f4")
        if a.ndim != 4:
            raise ValueError(f"{name} must be 4-D, got shape {a.shape}")
        blob = a.tobytes()
        entries.append({"name": name, "shape": list(a.shape), "dtype": "f32", "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header["tensors"] = entries
    text = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        for blob in blobs:
            f.write(blob)


def export_features(features, path):
    """`features` is the `features` module of a torchvision vgg19."""
    state = {k: v.detach().cpu().numpy() for k, v in features.state_dict().items()}
    tensors = {}
    for i in CONV_INDICES:
        w = state[f"{i}.weight"]
        b = state[f"{i}.bias"]
        tensors[f"features.{i}.weight"] = w
        tensors[f"features.{i}.bias"] = b.reshape(1, -1, 1, 1)
    write_archive(path, tensors, {"source": "torchvision.vgg19.features"})
    return pathlib.Path(path)

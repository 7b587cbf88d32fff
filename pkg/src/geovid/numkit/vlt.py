"""VLT1 binary tensor files.

Layout: magic bytes `VLT1`, u8 dtype tag (0 = f32, 1 = f64), u8 ndim,
ndim x u64 little-endian dims, then the raw little-endian payload.
Checkpoints store many named tensors as back-to-back VLT1 records in one
file plus a JSON manifest listing the record order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from ..errors import ParameterError

MAGIC = b"VLT1"
_TAG_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_TO_TAG = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_record(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    tag = _DTYPE_TO_TAG.get(arr.dtype)
    if tag is None:
        raise ParameterError(f"VLT1 stores f32/f64 only, got {arr.dtype}")
    fh.write(MAGIC)
    fh.write(struct.pack("<BB", tag, arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<Q", d))
    fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_record(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise ParameterError(f"bad VLT1 magic {magic!r}")
    tag, ndim = struct.unpack("<BB", fh.read(2))
    if tag not in _TAG_TO_DTYPE:
        raise ParameterError(f"unknown VLT1 dtype tag {tag}")
    dims = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
    dtype = _TAG_TO_DTYPE[tag]
    count = int(np.prod(dims)) if dims else 1
    payload = fh.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise ParameterError("truncated VLT1 payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.base, copy=True)


def save_tensor(path: str | Path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_record(fh, arr)


def load_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_record(fh)


def save_container(directory: str | Path, tensors: dict[str, np.ndarray],
                   meta: dict | None = None) -> None:
    """weights.vlt holds the records in sorted-name order; manifest.json names them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = sorted(tensors)
    with open(directory / "weights.vlt", "wb") as fh:
        for name in names:
            write_record(fh, tensors[name])
    manifest = {"tensors": names}
    if meta is not None:
        manifest["meta"] = meta
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_container(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    out = {}
    with open(directory / "weights.vlt", "rb") as fh:
        for name in manifest["tensors"]:
            out[name] = read_record(fh)
    return out, manifest.get("meta", {})

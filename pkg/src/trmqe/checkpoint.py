"""Checkpoint file I/O.

Layout: magic ``TRMCKPT1``, u32 little-endian length of a UTF-8 JSON
header, the header itself (config, architecture, parameter manifest with
name/shape/byte offset), then raw little-endian float32 blobs in manifest
order. Offsets are relative to the first blob byte.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import EmbeddingFormatError
from .model import ParamStore, QeModel, TrmConfig

MAGIC = b"TRMCKPT1"
FORMAT_VERSION = 1


def save_checkpoint(path, model: QeModel) -> None:
    path = Path(path)
    manifest = []
    blobs = []
    offset = 0
    for name, t in model.params.items():
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": model.architecture,
        "standard_depth": model.standard_depth,
        "config": model.config.to_dict(),
        "manifest": manifest,
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> QeModel:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise EmbeddingFormatError(f"{path}: bad checkpoint magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise EmbeddingFormatError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
        blob_start = fh.tell()
        tensors = {}
        for entry in header["manifest"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            fh.seek(blob_start + entry["offset"])
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise EmbeddingFormatError(f"{path}: truncated blob for parameter {entry['name']}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
            tensors[entry["name"]] = Tensor(arr, requires_grad=True)
    config = TrmConfig(**header["config"])
    return QeModel(
        config,
        architecture=header["architecture"],
        standard_depth=header["standard_depth"],
        params=ParamStore(tensors),
    )

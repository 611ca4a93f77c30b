"""TRMQEMB1 embedding-file writer, byte-compatible with the training stack.

Layout, little-endian throughout: magic ``TRMQEMB1`` (8 bytes), u32
version=1, u32 d_in, u64 example count, u32 metadata length + UTF-8 JSON
metadata, then per example: u32 pair_id length + UTF-8 pair_id, f32 da_z,
u32 s, u32 t, s*d_in float32 source rows, t*d_in float32 translation rows.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"TRMQEMB1"
VERSION = 1


def write_embeddings(
    path,
    examples: Sequence[tuple[str, float, np.ndarray, np.ndarray]],
    d_in: int,
    metadata: dict,
) -> int:
    """Write (pair_id, da_z, source rows, translation rows) tuples."""
    path = Path(path)
    payload = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, d_in, len(examples)))
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for i, (pair_id, da_z, src, tr) in enumerate(examples):
            src = np.ascontiguousarray(src, dtype="<f4")
            tr = np.ascontiguousarray(tr, dtype="<f4")
            for side, arr in (("source", src), ("translation", tr)):
                if arr.ndim != 2 or (arr.size and arr.shape[1] != d_in):
                    raise ValueError(f"example {i}: {side} rows must be (n, {d_in}), got {arr.shape}")
                if not np.all(np.isfinite(arr)):
                    raise ValueError(f"example {i}: non-finite {side} hidden states")
            pid = pair_id.encode("utf-8")
            fh.write(struct.pack("<I", len(pid)))
            fh.write(pid)
            fh.write(struct.pack("<fII", float(da_z), src.shape[0], tr.shape[0]))
            fh.write(src.tobytes())
            fh.write(tr.tobytes())
    return len(examples)

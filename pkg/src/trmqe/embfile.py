"""Binary embedding file format (magic ``TRMQEMB1``), bit-exact round-trip.

Layout, all little-endian:

    magic (8 bytes) | u32 version=1 | u32 d_in | u64 example count
    u32 metadata length | UTF-8 JSON metadata (encoder_id, tokenizer note,
    creation params) | per example: u32 pair_id length + UTF-8 pair_id,
    f32 da_z, u32 s, u32 t, s*d_in f32 source rows, t*d_in f32 translation
    rows.

Texts are not stored; records read back carry empty source/translation
strings. Written by this module and by the offline extractor.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import EmbeddedExample, QeRecord
from .errors import EmbeddingCorruptError, EmbeddingFormatError

MAGIC = b"TRMQEMB1"
VERSION = 1


def write_embedding_file(
    path,
    examples: Sequence[EmbeddedExample],
    d_in: int | None = None,
    metadata: dict | None = None,
) -> int:
    """Write examples to ``path``; returns the record count.

    ``d_in`` is required only for an empty file; otherwise it is taken from
    the first example and enforced across all of them.
    """
    path = Path(path)
    examples = list(examples)
    if d_in is None:
        if not examples:
            raise EmbeddingFormatError("d_in must be given for an empty embedding file")
        d_in = examples[0].d_in
    meta = {"encoder_id": examples[0].encoder_id if examples else "unknown"}
    meta.update(metadata or {})
    payload = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, d_in, len(examples)))
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for i, ex in enumerate(examples):
            src = np.ascontiguousarray(ex.source_emb, dtype="<f4")
            tr = np.ascontiguousarray(ex.translation_emb, dtype="<f4")
            for side, arr in (("source", src), ("translation", tr)):
                if arr.ndim != 2 or (arr.size and arr.shape[1] != d_in):
                    raise EmbeddingFormatError(
                        f"example {i}: {side} rows must be 2-D with width {d_in}, got shape {arr.shape}"
                    )
                if not np.all(np.isfinite(arr)):
                    raise EmbeddingFormatError(f"example {i}: non-finite {side} embeddings")
            pid = ex.record.pair_id.encode("utf-8")
            fh.write(struct.pack("<I", len(pid)))
            fh.write(pid)
            fh.write(struct.pack("<fII", ex.record.da_z, src.shape[0], tr.shape[0]))
            fh.write(src.tobytes())
            fh.write(tr.tobytes())
    return len(examples)


def _read_exact(fh, n: int, index: int, what: str) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise EmbeddingCorruptError(f"truncated {what} at record index {index}", record_index=index)
    return raw


def read_embedding_file(path) -> tuple[dict, list[EmbeddedExample]]:
    """Read a full embedding file; returns (metadata, examples).

    Metadata gains ``d_in`` and ``count`` keys from the fixed header.
    Raises EmbeddingFormatError for a bad magic/version and
    EmbeddingCorruptError (with ``record_index``) for truncation,
    non-finite values, or trailing garbage.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise EmbeddingFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        header = fh.read(16)
        if len(header) != 16:
            raise EmbeddingFormatError(f"{path}: truncated fixed header")
        version, d_in, count = struct.unpack("<IIQ", header)
        if version != VERSION:
            raise EmbeddingFormatError(f"{path}: unsupported version {version}, expected {VERSION}")
        raw = fh.read(4)
        if len(raw) != 4:
            raise EmbeddingFormatError(f"{path}: truncated metadata length")
        (mlen,) = struct.unpack("<I", raw)
        mraw = fh.read(mlen)
        if len(mraw) != mlen:
            raise EmbeddingFormatError(f"{path}: truncated metadata block")
        try:
            meta = json.loads(mraw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise EmbeddingFormatError(f"{path}: metadata is not valid JSON ({exc})") from exc
        encoder_id = str(meta.get("encoder_id", "unknown"))

        examples = []
        for i in range(count):
            (pid_len,) = struct.unpack("<I", _read_exact(fh, 4, i, "pair_id length"))
            pid = _read_exact(fh, pid_len, i, "pair_id").decode("utf-8")
            da_z, s, t = struct.unpack("<fII", _read_exact(fh, 12, i, "record header"))
            src = np.frombuffer(_read_exact(fh, 4 * s * d_in, i, "source rows"), dtype="<f4")
            tr = np.frombuffer(_read_exact(fh, 4 * t * d_in, i, "translation rows"), dtype="<f4")
            src = src.reshape(s, d_in).astype(np.float32)
            tr = tr.reshape(t, d_in).astype(np.float32)
            if not (np.all(np.isfinite(src)) and np.all(np.isfinite(tr))):
                raise EmbeddingCorruptError(f"non-finite embeddings at record index {i}", record_index=i)
            examples.append(
                EmbeddedExample(QeRecord(pid, "", "", float(da_z)), src, tr, encoder_id)
            )
        trailing = fh.read(1)
        if trailing:
            raise EmbeddingCorruptError(
                f"trailing bytes after declared {count} records", record_index=int(count)
            )
    meta["d_in"] = int(d_in)
    meta["count"] = int(count)
    return meta, examples


def group_examples(examples: Iterable[EmbeddedExample]) -> dict[str, list[EmbeddedExample]]:
    groups: dict[str, list[EmbeddedExample]] = {}
    for ex in examples:
        groups.setdefault(ex.record.pair_id, []).append(ex)
    return groups

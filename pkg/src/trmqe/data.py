"""QE dataset records and TSV/JSONL ingestion.

A dataset row is (pair_id, source, translation, score). Scores are either
already z-normalised direct-assessment values (``score_kind="z"``) or raw
DA scores that get z-normalised per language pair (``score_kind="raw"``,
population standard deviation). The regression target in (0,1) is always
sigmoid of the z-score and is computed, never stored.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError

logger = logging.getLogger(__name__)

TSV_COLUMNS = ("pair_id", "source", "translation", "score")
SCORE_KINDS = ("z", "raw")


def _sigmoid(x: float) -> float:
    e = math.exp(-abs(x))
    return 1.0 / (1.0 + e) if x >= 0 else e / (1.0 + e)


@dataclass(frozen=True)
class QeRecord:
    pair_id: str
    source: str
    translation: str
    da_z: float

    @property
    def target01(self) -> float:
        return _sigmoid(self.da_z)


@dataclass(frozen=True)
class EmbeddedExample:
    """Per-token embeddings for one record; rows are float32, width d_in."""

    record: QeRecord
    source_emb: np.ndarray
    translation_emb: np.ndarray
    encoder_id: str

    @property
    def d_in(self) -> int:
        return int(self.source_emb.shape[-1]) if self.source_emb.size else int(self.translation_emb.shape[-1])


def _parse_rows(path: Path, fmt: str) -> list[tuple[str, str, str, float, int]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if fmt == "tsv":
                parts = line.split("\t")
                if len(parts) != len(TSV_COLUMNS):
                    raise DatasetFormatError(
                        f"{path}:{lineno}: expected {len(TSV_COLUMNS)} tab-separated fields, got {len(parts)}"
                    )
                pair_id, source, translation, score_text = parts
            else:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
                missing = [c for c in TSV_COLUMNS if c not in obj]
                if missing:
                    raise DatasetFormatError(f"{path}:{lineno}: missing fields {missing}")
                pair_id, source, translation, score_text = (
                    obj["pair_id"],
                    obj["source"],
                    obj["translation"],
                    obj["score"],
                )
            try:
                score = float(score_text)
            except (TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: score {score_text!r} is not a number") from exc
            if not math.isfinite(score):
                raise DatasetFormatError(f"{path}:{lineno}: score must be finite")
            rows.append((str(pair_id), str(source), str(translation), score, lineno))
    return rows


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("tsv", "jsonl"):
            raise DatasetFormatError(f"unknown dataset format {fmt!r}")
        return fmt
    suffix = path.suffix.lower()
    if suffix in (".tsv", ".txt"):
        return "tsv"
    if suffix in (".jsonl", ".json"):
        return "jsonl"
    raise DatasetFormatError(f"cannot infer dataset format from {path.name!r}; pass fmt='tsv' or 'jsonl'")


def compute_da_stats(path, fmt: str | None = None) -> dict[str, tuple[float, float]]:
    """Per-pair (mean, population std) of the raw score column."""
    path = Path(path)
    rows = _parse_rows(path, _infer_format(path, fmt))
    by_pair: dict[str, list[float]] = {}
    for pair_id, _, _, score, _ in rows:
        by_pair.setdefault(pair_id, []).append(score)
    stats = {}
    for pair_id, scores in by_pair.items():
        arr = np.asarray(scores, dtype=np.float64)
        mean = float(arr.mean())
        std = float(arr.std())  # population std
        if std == 0.0:
            raise DatasetFormatError(f"pair {pair_id!r}: zero score variance, z-normalisation undefined")
        stats[pair_id] = (mean, std)
    return stats


def load_dataset(
    path,
    fmt: str | None = None,
    score_kind: str = "z",
    stats: dict[str, tuple[float, float]] | None = None,
) -> dict[str, list[QeRecord]]:
    """Parse a dataset file into records grouped by pair_id.

    ``score_kind="z"`` reads the score column as the z-score directly.
    ``score_kind="raw"`` z-normalises per pair; pass ``stats`` computed on
    the training split to avoid leaking test statistics, otherwise stats
    come from this file.
    """
    if score_kind not in SCORE_KINDS:
        raise DatasetFormatError(f"score_kind must be one of {SCORE_KINDS}, got {score_kind!r}")
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"dataset file not found: {path}")
    rows = _parse_rows(path, _infer_format(path, fmt))
    if not rows:
        logger.warning("%s: dataset file has no records", path)
    if score_kind == "raw" and stats is None:
        stats = compute_da_stats(path, fmt)

    groups: dict[str, list[QeRecord]] = {}
    for pair_id, source, translation, score, lineno in rows:
        if score_kind == "raw":
            if pair_id not in stats:
                raise DatasetFormatError(f"{path}:{lineno}: pair {pair_id!r} absent from provided DA stats")
            mean, std = stats[pair_id]
            da_z = (score - mean) / std
        else:
            da_z = score
        groups.setdefault(pair_id, []).append(QeRecord(pair_id, source, translation, da_z))
    for pair_id, records in groups.items():
        if not records:
            logger.warning("pair %s has no records", pair_id)
    return groups


def flatten(groups: dict[str, list[QeRecord]]) -> list[QeRecord]:
    return [r for records in groups.values() for r in records]

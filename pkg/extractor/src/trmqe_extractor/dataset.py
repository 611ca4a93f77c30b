"""Dataset reading for the extractor.

Same row schema as the training stack consumes: TSV columns
(pair_id, source, translation, score) or JSONL objects with those field
names. Scores are z-values by default; ``score_kind="raw"`` z-normalises
per pair with the population standard deviation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

FIELDS = ("pair_id", "source", "translation", "score")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    pair_id: str
    source: str
    translation: str
    da_z: float


def _parse(path: Path) -> list[tuple[str, str, str, float]]:
    suffix = path.suffix.lower()
    if suffix in (".tsv", ".txt"):
        fmt = "tsv"
    elif suffix in (".jsonl", ".json"):
        fmt = "jsonl"
    else:
        raise DatasetError(f"cannot infer dataset format from {path.name!r}")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if fmt == "tsv":
                parts = line.split("\t")
                if len(parts) != 4:
                    raise DatasetError(f"{path}:{lineno}: expected 4 tab-separated fields")
                pair_id, source, translation, score_text = parts
            else:
                obj = json.loads(line)
                missing = [f for f in FIELDS if f not in obj]
                if missing:
                    raise DatasetError(f"{path}:{lineno}: missing fields {missing}")
                pair_id, source, translation, score_text = (obj[f] for f in FIELDS)
            try:
                score = float(score_text)
            except (TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: score {score_text!r} is not a number") from exc
            if not math.isfinite(score):
                raise DatasetError(f"{path}:{lineno}: score must be finite")
            rows.append((str(pair_id), str(source), str(translation), score))
    return rows


def load_records(path, score_kind: str = "z") -> list[Record]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset not found: {path}")
    rows = _parse(path)
    if score_kind == "z":
        return [Record(p, s, t, z) for p, s, t, z in rows]
    if score_kind != "raw":
        raise DatasetError(f"score_kind must be 'z' or 'raw', got {score_kind!r}")
    by_pair: dict[str, list[float]] = {}
    for p, _, _, score in rows:
        by_pair.setdefault(p, []).append(score)
    stats = {}
    for p, scores in by_pair.items():
        n = len(scores)
        mean = sum(scores) / n
        var = sum((s - mean) ** 2 for s in scores) / n
        if var == 0.0:
            raise DatasetError(f"pair {p!r}: zero score variance, z-normalisation undefined")
        stats[p] = (mean, math.sqrt(var))
    return [Record(p, s, t, (score - stats[p][0]) / stats[p][1]) for p, s, t, score in rows]

"""Evaluation metrics: Pearson, Spearman (average ranks), MAE, bootstrap CIs.

All metrics compute in float64. Constant inputs raise MetricUndefinedError
("undefined correlation (zero variance)") instead of propagating NaN.
Bootstrap intervals are percentile intervals over seeded paired resamples;
resamples on which the metric is undefined are redrawn, with total draws
capped at 10x the requested resample count.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import MetricUndefinedError

logger = logging.getLogger(__name__)

ZERO_VARIANCE_MSG = "undefined correlation (zero variance)"


def _as_f64(x, y, min_len: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise MetricUndefinedError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < min_len:
        raise MetricUndefinedError(f"need at least {min_len} points, got {x.shape[0]}")
    return x, y


def pearson(x, y) -> float:
    """Sample Pearson correlation, clamped to [-1, 1]."""
    x, y = _as_f64(x, y, 2)
    xm = x - x.mean()
    ym = y - y.mean()
    sx = float(xm @ xm)
    sy = float(ym @ ym)
    if sx == 0.0 or sy == 0.0:
        raise MetricUndefinedError(ZERO_VARIANCE_MSG)
    r = float(xm @ ym) / np.sqrt(sx * sy)
    return float(min(1.0, max(-1.0, r)))


def average_ranks(v) -> np.ndarray:
    """1-based ranks; tied values receive the mean of the ranks they cover."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    uniq, inverse, counts = np.unique(v, return_inverse=True, return_counts=True)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    mean_rank = starts + (counts + 1) / 2.0
    return mean_rank[inverse]


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = _as_f64(x, y, 2)
    return pearson(average_ranks(x), average_ranks(y))


def mae(pred, gold) -> float:
    pred, gold = _as_f64(pred, gold, 1)
    return float(np.mean(np.abs(pred - gold)))


def bootstrap_ci(
    metric: Callable[[np.ndarray, np.ndarray], float],
    x,
    y,
    resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    index_sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None,
) -> tuple[float, float]:
    """Percentile interval of ``metric`` over paired resamples with replacement.

    ``index_sampler`` overrides the resample-index draw (testing hook).
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    metric(x, y)  # must be computable on the full sample
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    draw = index_sampler if index_sampler is not None else (lambda r, m: r.integers(0, m, m))
    stats: list[float] = []
    attempts = 0
    max_attempts = 10 * resamples
    while len(stats) < resamples and attempts < max_attempts:
        attempts += 1
        idx = draw(rng, n)
        try:
            stats.append(metric(x[idx], y[idx]))
        except MetricUndefinedError:
            continue
    if len(stats) < resamples:
        raise MetricUndefinedError(
            f"bootstrap failed: {attempts - len(stats)}/{attempts} resamples undefined (>90%)"
        )
    alpha = (1.0 - level) / 2.0
    low, high = np.percentile(stats, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return float(low), float(high)


# ---------------------------------------------------------------------------
# report assembly


@dataclass
class PairReport:
    pair_id: str
    n: int
    pearson: float | None
    spearman: float | None
    mae: float | None
    pearson_ci: tuple[float, float] | None
    spearman_ci: tuple[float, float] | None
    mae_ci: tuple[float, float] | None
    error: str | None = None


@dataclass
class EvalReport:
    pairs: list[PairReport]
    overall: PairReport
    macro: dict[str, float | None]
    predictions_path: str | None = None

    def to_json(self) -> str:
        payload = {
            "pairs": [asdict(p) for p in self.pairs],
            "overall": asdict(self.overall),
            "macro": self.macro,
            "predictions_path": self.predictions_path,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_markdown(self) -> str:
        def fmt(v):
            return "--" if v is None else f"{v:.4f}"

        def fmt_ci(ci):
            return "--" if ci is None else f"[{ci[0]:.4f}, {ci[1]:.4f}]"

        lines = [
            "| Pair | n | Pearson | 95% CI | Spearman | 95% CI | MAE | 95% CI |",
            "|---|---|---|---|---|---|---|---|",
        ]
        for p in self.pairs + [self.overall]:
            name = f"**{p.pair_id}**" if p is self.overall else p.pair_id
            row = (
                f"| {name} | {p.n} | {fmt(p.pearson)} | {fmt_ci(p.pearson_ci)} "
                f"| {fmt(p.spearman)} | {fmt_ci(p.spearman_ci)} | {fmt(p.mae)} | {fmt_ci(p.mae_ci)} |"
            )
            lines.append(row)
        lines.append(
            "| macro-mean | {n} | {p} | -- | {s} | -- | {m} | -- |".format(
                n=sum(p.n for p in self.pairs),
                p=fmt(self.macro.get("pearson")),
                s=fmt(self.macro.get("spearman")),
                m=fmt(self.macro.get("mae")),
            )
        )
        errors = [p for p in self.pairs + [self.overall] if p.error]
        if errors:
            lines.append("")
            for p in errors:
                lines.append(f"- `{p.pair_id}`: {p.error}")
        return "\n".join(lines) + "\n"


_METRICS: tuple[tuple[str, Callable], ...] = (("pearson", pearson), ("spearman", spearman), ("mae", mae))


def _pair_report(pair_id: str, gold: np.ndarray, pred: np.ndarray, resamples: int, seed_seq, pair_idx: int) -> PairReport:
    values: dict[str, float | None] = {}
    cis: dict[str, tuple[float, float] | None] = {}
    error = None
    for m_idx, (name, fn) in enumerate(_METRICS):
        try:
            point = fn(pred, gold)
        except MetricUndefinedError as exc:
            values[name] = None
            cis[name] = None
            error = str(exc)
            continue
        values[name] = point
        if resamples > 0:
            # stable pair index, not hash(): string hashing is salted per process
            child_seed = int(np.random.SeedSequence(seed_seq.entropy, spawn_key=(pair_idx, m_idx)).generate_state(1)[0])
            try:
                low, high = bootstrap_ci(fn, pred, gold, resamples=resamples, seed=child_seed)
                cis[name] = (min(low, point), max(high, point))
            except MetricUndefinedError as exc:
                cis[name] = None
                error = error or str(exc)
        else:
            cis[name] = None
    return PairReport(
        pair_id=pair_id,
        n=int(gold.shape[0]),
        pearson=values["pearson"],
        spearman=values["spearman"],
        mae=values["mae"],
        pearson_ci=cis["pearson"],
        spearman_ci=cis["spearman"],
        mae_ci=cis["mae"],
        error=error,
    )


def evaluate_predictions(
    by_pair: dict[str, tuple[np.ndarray, np.ndarray]],
    resamples: int = 1000,
    seed: int = 0,
) -> EvalReport:
    """Per-pair and pooled metrics from {pair_id: (gold, predicted)} arrays.

    Pairs with fewer than 2 examples are skipped (warning) but still pooled.
    The overall row pools every prediction; the macro block is the plain
    mean of each metric over pairs where it is defined.
    """
    if not by_pair:
        raise MetricUndefinedError("no predictions to evaluate")
    seed_seq = np.random.SeedSequence(seed)
    pair_reports = []
    all_gold, all_pred = [], []
    for pair_idx, (pair_id, (gold, pred)) in enumerate(by_pair.items(), start=1):
        gold = np.asarray(gold, dtype=np.float64).reshape(-1)
        pred = np.asarray(pred, dtype=np.float64).reshape(-1)
        all_gold.append(gold)
        all_pred.append(pred)
        if gold.shape[0] < 2:
            logger.warning("pair %s has %d example(s); skipping per-pair metrics", pair_id, gold.shape[0])
            continue
        pair_reports.append(_pair_report(pair_id, gold, pred, resamples, seed_seq, pair_idx))
    overall = _pair_report("overall", np.concatenate(all_gold), np.concatenate(all_pred), resamples, seed_seq, 0)
    macro = {}
    for name, _ in _METRICS:
        vals = [getattr(p, name) for p in pair_reports if getattr(p, name) is not None]
        macro[name] = float(np.mean(vals)) if vals else None
    return EvalReport(pairs=pair_reports, overall=overall, macro=macro)


def dump_predictions(path, rows: Sequence[tuple[str, float, float]]) -> None:
    """TSV prediction dump: pair_id, gold target01, predicted."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("pair_id\tgold\tpredicted\n")
        for pair_id, gold, predicted in rows:
            fh.write(f"{pair_id}\t{gold!r}\t{predicted!r}\n")


def evaluate_model(
    model,
    examples_by_pair: dict[str, list],
    resamples: int = 1000,
    seed: int = 0,
    predictions_path=None,
    batch_size: int = 64,
) -> EvalReport:
    """Run deterministic inference over a grouped test set and score it."""
    by_pair = {}
    dump_rows = []
    for pair_id, examples in examples_by_pair.items():
        pairs = [(ex.source_emb, ex.translation_emb) for ex in examples]
        gold = np.array([ex.record.target01 for ex in examples], dtype=np.float64)
        pred = model.predict(pairs, batch_size=batch_size)
        by_pair[pair_id] = (gold, pred)
        dump_rows.extend((pair_id, float(g), float(p)) for g, p in zip(gold, pred))
    report = evaluate_predictions(by_pair, resamples=resamples, seed=seed)
    if predictions_path is not None:
        dump_predictions(predictions_path, dump_rows)
        # record the basename only: the dump sits next to the report and the
        # JSON stays byte-identical across output directories
        report.predictions_path = Path(predictions_path).name
    return report

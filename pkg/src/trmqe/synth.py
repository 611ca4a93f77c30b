"""Synthetic embedding task: quality = fraction of aligned translation tokens.

Each example draws random source token vectors; a random subset of the
translation positions receives jittered copies of source vectors, the rest
are fresh distractors. The z-score target is a linear function of the
aligned fraction plus optional Gaussian noise, so an attention model that
matches translation tokens against source tokens can recover the target,
and an analytic nearest-neighbour oracle solves the task exactly at zero
noise.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import EmbeddedExample, QeRecord

# da_z spans [-2, 2] over aligned fractions [0, 1]
_Z_SPAN = 4.0
_JITTER = 0.05


def synth_task(
    n_examples: int,
    seq_lens: tuple[int, int] = (4, 8),
    d_in: int = 64,
    noise_sigma: float = 0.0,
    seed: int = 0,
    n_pairs: int = 1,
    encoder_id: str = "synthetic-alignment-v1",
) -> list[EmbeddedExample]:
    """Generate ``n_examples`` alignment-task examples, deterministic in seed."""
    lo, hi = seq_lens
    if lo < 1 or hi < lo:
        raise ValueError(f"seq_lens must satisfy 1 <= lo <= hi, got {seq_lens}")
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n_examples):
        s = int(rng.integers(lo, hi + 1))
        t = int(rng.integers(lo, hi + 1))
        source = rng.standard_normal((s, d_in)).astype(np.float32)
        translation = rng.standard_normal((t, d_in)).astype(np.float32)
        n_aligned = int(rng.integers(0, t + 1))
        if n_aligned:
            positions = rng.choice(t, size=n_aligned, replace=False)
            src_idx = rng.integers(0, s, size=n_aligned)
            translation[positions] = (
                source[src_idx] + _JITTER * rng.standard_normal((n_aligned, d_in))
            ).astype(np.float32)
        frac = n_aligned / t
        da_z = _Z_SPAN * (frac - 0.5)
        if noise_sigma > 0.0:
            da_z += noise_sigma * rng.standard_normal()
        record = QeRecord(
            pair_id=f"syn-{i % n_pairs:02d}",
            source=f"src-{i}",
            translation=f"mt-{i}",
            da_z=float(da_z),
        )
        examples.append(EmbeddedExample(record, source, translation, encoder_id))
    return examples


def alignment_oracle(example: EmbeddedExample, threshold_scale: float = 0.5) -> float:
    """Fraction of translation rows within threshold of some source row.

    The threshold (threshold_scale * sqrt(d_in)) sits far above the copy
    jitter and far below typical distractor distances.
    """
    src, tr = example.source_emb, example.translation_emb
    if len(tr) == 0:
        return 0.0
    if len(src) == 0:
        return 0.0
    d2 = ((tr[:, None, :] - src[None, :, :]) ** 2).sum(axis=-1)
    threshold = threshold_scale * np.sqrt(src.shape[-1])
    return float(np.mean(np.sqrt(d2.min(axis=1)) < threshold))

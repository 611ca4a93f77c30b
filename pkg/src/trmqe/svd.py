"""Truncated SVD projection for reducing encoder hidden states.

Fitted on mean-centered training-split token rows (seeded subsample,
100k-row cap); projection is (x - mean) @ V_k with V_k the top-k right
singular vectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import EmbeddedExample
from .errors import SvdRankError

SUBSAMPLE_CAP = 100_000


@dataclass
class SvdProjector:
    mean: np.ndarray  # (d_in,)
    basis: np.ndarray  # (d_in, k), orthonormal columns
    singular_values: np.ndarray  # (k,), non-increasing

    @property
    def d_in(self) -> int:
        return int(self.basis.shape[0])

    @property
    def k(self) -> int:
        return int(self.basis.shape[1])


def fit_svd(sample: np.ndarray, k: int) -> SvdProjector:
    """Mean-centered thin SVD of the sample; keeps the top-k directions."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim != 2:
        raise SvdRankError(f"sample must be 2-D, got shape {sample.shape}")
    n, d = sample.shape
    if k < 1:
        raise SvdRankError(f"k must be >= 1, got {k}")
    mean = sample.mean(axis=0) if n else np.zeros(d)
    centered = sample - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = (s[0] if s.size else 0.0) * max(n, d) * np.finfo(np.float64).eps
    rank = int(np.sum(s > tol))
    if k > rank:
        raise SvdRankError(f"requested k={k} components but sample rank is only {rank}")
    return SvdProjector(mean=mean, basis=vt[:k].T.copy(), singular_values=s[:k].copy())


def project(x: np.ndarray, projector: SvdProjector) -> np.ndarray:
    """(x - mean) @ V_k; output keeps the input's dtype."""
    x = np.asarray(x)
    if x.shape[-1] != projector.d_in:
        raise SvdRankError(f"cannot project width-{x.shape[-1]} rows with a d_in={projector.d_in} projector")
    out = (x.astype(np.float64) - projector.mean) @ projector.basis
    return out.astype(x.dtype if x.dtype in (np.float32, np.float64) else np.float32)


def collect_token_rows(
    examples: Sequence[EmbeddedExample],
    cap: int = SUBSAMPLE_CAP,
    seed: int = 0,
) -> np.ndarray:
    """All source+translation rows, subsampled to ``cap`` rows with a seeded RNG."""
    blocks = [b for ex in examples for b in (ex.source_emb, ex.translation_emb) if len(b)]
    if not blocks:
        return np.zeros((0, examples[0].d_in if examples else 0), dtype=np.float32)
    rows = np.concatenate(blocks, axis=0)
    if len(rows) > cap:
        idx = np.random.default_rng(seed).choice(len(rows), size=cap, replace=False)
        rows = rows[np.sort(idx)]
    return rows


def project_examples(examples: Sequence[EmbeddedExample], projector: SvdProjector) -> list[EmbeddedExample]:
    return [
        EmbeddedExample(
            record=ex.record,
            source_emb=project(ex.source_emb, projector),
            translation_emb=project(ex.translation_emb, projector),
            encoder_id=f"{ex.encoder_id}+svd{projector.k}",
        )
        for ex in examples
    ]


def save_projector(path, projector: SvdProjector) -> None:
    np.savez(
        Path(path),
        mean=projector.mean,
        basis=projector.basis,
        singular_values=projector.singular_values,
    )


def load_projector(path) -> SvdProjector:
    with np.load(Path(path)) as data:
        return SvdProjector(
            mean=data["mean"],
            basis=data["basis"],
            singular_values=data["singular_values"],
        )

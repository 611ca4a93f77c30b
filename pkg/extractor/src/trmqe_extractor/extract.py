"""Frozen inference over a pretrained encoder, one side per pass.

Source and translation are tokenized and encoded independently; the
cross-attention between the two sides happens downstream in the recursive
head, so the encoder never sees the concatenated pair. Encoder special
tokens are stripped from the output; per-side token counts are capped at
``max_tokens`` (truncation of the tail, logged). Weights are never
updated.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import Record, load_records
from .embwriter import write_embeddings

logger = logging.getLogger(__name__)


class ExtractError(RuntimeError):
    pass


@dataclass
class ExtractJob:
    dataset: str
    encoder_id: str
    out: str
    layer: int = -1
    max_tokens: int = 128
    batch_size: int = 16
    device: str = "cpu"
    score_kind: str = "z"

    def validate(self) -> None:
        if self.max_tokens < 1:
            raise ExtractError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.batch_size < 1:
            raise ExtractError(f"batch_size must be >= 1, got {self.batch_size}")


def _load_encoder(encoder_id: str, device: str):
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(encoder_id)
        model = AutoModel.from_pretrained(encoder_id)
    except (OSError, ValueError) as exc:
        raise ExtractError(f"unknown or unavailable encoder {encoder_id!r}: {exc}") from exc
    model.eval()
    model.requires_grad_(False)
    model.to(device)
    return tokenizer, model


def _encode_batch(texts, tokenizer, model, layer: int, max_tokens: int, device: str):
    """Final (or ``layer``-th) hidden states per text, specials stripped."""
    enc = tokenizer(
        texts,
        padding=True,
        truncation=True,
        max_length=max_tokens + tokenizer.num_special_tokens_to_add(),
        return_special_tokens_mask=True,
        return_tensors="pt",
    )
    special_mask = enc.pop("special_tokens_mask")
    enc = {k: v.to(device) for k, v in enc.items()}
    with torch.no_grad():
        out = model(**enc, output_hidden_states=True)
    states = out.hidden_states[layer]
    keep = (enc["attention_mask"].cpu().bool()) & (~special_mask.bool())
    rows = []
    for i in range(len(texts)):
        sel = states[i][keep[i]]
        rows.append(sel[:max_tokens].cpu().numpy().astype(np.float32))
    return rows


def _encode_all(texts, tokenizer, model, job: ExtractJob):
    """Batch the encode, halving the batch size on out-of-memory errors."""
    batch_size = job.batch_size
    rows: list[np.ndarray] = []
    i = 0
    while i < len(texts):
        chunk = texts[i : i + batch_size]
        try:
            rows.extend(_encode_batch(chunk, tokenizer, model, job.layer, job.max_tokens, job.device))
            i += len(chunk)
        except (torch.cuda.OutOfMemoryError, RuntimeError) as exc:
            if "out of memory" not in str(exc).lower() or batch_size == 1:
                raise
            batch_size = max(1, batch_size // 2)
            logger.warning("encoder ran out of memory; halving batch size to %d", batch_size)
    return rows


def extract(job: ExtractJob) -> int:
    """Run the job; returns the number of examples written."""
    job.validate()
    records: list[Record] = load_records(job.dataset, score_kind=job.score_kind)
    tokenizer, model = _load_encoder(job.encoder_id, job.device)
    d_in = int(model.config.hidden_size)
    n_layers = len(model(**tokenizer("x", return_tensors="pt"), output_hidden_states=True).hidden_states)
    if not -n_layers <= job.layer < n_layers:
        raise ExtractError(f"layer {job.layer} out of range for {n_layers} hidden-state layers")

    torch.manual_seed(0)  # encoders are eval-mode; the seed guards any stray sampling
    src_rows = _encode_all([r.source for r in records], tokenizer, model, job)
    tr_rows = _encode_all([r.translation for r in records], tokenizer, model, job)

    n_truncated = sum(1 for r in src_rows + tr_rows if len(r) == job.max_tokens)
    if n_truncated:
        logger.warning("%d side(s) hit the %d-token cap", n_truncated, job.max_tokens)
    examples = [
        (r.pair_id, r.da_z, s, t) for r, s, t in zip(records, src_rows, tr_rows)
    ]
    out = Path(job.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(
        out,
        examples,
        d_in=d_in,
        metadata={
            "encoder_id": job.encoder_id,
            "tokenizer_note": f"{type(tokenizer).__name__}, specials stripped, sides encoded separately",
            "creation_params": {
                "layer": job.layer,
                "max_tokens": job.max_tokens,
                "score_kind": job.score_kind,
                "dataset": str(Path(job.dataset).name),
            },
        },
    )
    logger.info("wrote %d examples (d_in=%d) to %s", len(examples), d_in, out)
    return len(examples)

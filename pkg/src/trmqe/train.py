"""Training engine: loss, AdamW, freezing, early stopping, train log.

Supervision follows the per-step readout: the base loss (MSE by default,
BCE behind a flag) applies to the final refinement step's prediction; a
weight lambda in [0,1] adds the mean of the same loss over earlier steps.
Parameters matched by the freeze patterns receive no updates and stay
bit-identical. Model selection maximizes validation Spearman; the best
snapshot is restored before returning.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from . import metrics
from .autograd import Tape, Tensor
from .data import EmbeddedExample
from .errors import ConfigError, MetricUndefinedError, TrainAbortError
from .model import ParamStore, QeModel, assemble_batch, name_is_frozen, normalize_freeze_spec

logger = logging.getLogger(__name__)

LOSS_KINDS = ("mse", "bce")
_BCE_EPS = 1e-6


@dataclass
class TrainConfig:
    lr: float = 3e-4
    weight_decay: float = 0.01
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 5
    loss: str = "mse"
    per_step_loss_weight: float = 0.0
    freeze_spec: tuple[str, ...] | str = ()
    seed: int = 0
    eval_every: int = 1
    grad_clip: float = 1.0
    warmup_steps: int = 100

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.per_step_loss_weight <= 1.0:
            raise ConfigError(f"per_step_loss_weight must be in [0,1], got {self.per_step_loss_weight}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.eval_every < 1:
            raise ConfigError("batch_size, max_epochs and eval_every must be >= 1")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["freeze_spec"] = list(normalize_freeze_spec(self.freeze_spec))
        return d


@dataclass
class TrainLogEntry:
    epoch: int
    train_loss: float
    val_pearson: float | None
    val_spearman: float | None
    wall_clock_s: float


@dataclass
class TrainLog:
    entries: list[TrainLogEntry] = field(default_factory=list)
    selected_epoch: int | None = None

    def to_jsonl(self) -> str:
        lines = [json.dumps(asdict(e), sort_keys=True) for e in self.entries]
        lines.append(json.dumps({"selected_epoch": self.selected_epoch}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainLog":
        log = cls()
        for line in text.strip().split("\n"):
            obj = json.loads(line)
            if "selected_epoch" in obj and "epoch" not in obj:
                log.selected_epoch = obj["selected_epoch"]
            else:
                log.entries.append(TrainLogEntry(**obj))
        return log


# ---------------------------------------------------------------------------
# loss


def _squash(p: Tensor) -> Tensor:
    # affine squeeze into [eps, 1-eps] so BCE logs stay finite in float32
    return ag.add(ag.scale(p, 1.0 - 2.0 * _BCE_EPS), Tensor(np.full(1, _BCE_EPS, dtype=p.dtype)))


def _single_loss(pred: Tensor, target: Tensor, kind: str) -> Tensor:
    if kind == "mse":
        d = ag.sub(pred, target)
        return ag.mul(d, d).mean()
    p = _squash(pred)
    one = Tensor(np.ones(1, dtype=p.dtype))
    ll = ag.add(ag.mul(target, ag.log(p)), ag.mul(ag.sub(one, target), ag.log(ag.sub(one, p))))
    return ag.scale(ll.mean(), -1.0)


def step_loss(pred_steps: Sequence[Tensor], target: Tensor, kind: str = "mse", lam: float = 0.0) -> Tensor:
    """Final-step loss plus lam * mean of the same loss over earlier steps."""
    if kind not in LOSS_KINDS:
        raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {kind!r}")
    total = _single_loss(pred_steps[-1], target, kind)
    earlier = pred_steps[:-1]
    if lam > 0.0 and earlier:
        acc = _single_loss(earlier[0], target, kind)
        for p in earlier[1:]:
            acc = ag.add(acc, _single_loss(p, target, kind))
        total = ag.add(total, ag.scale(acc, lam / len(earlier)))
    return total


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """Adaptive moments with decoupled weight decay and linear warmup."""

    def __init__(
        self,
        params: ParamStore,
        trainable: Sequence[str],
        lr: float,
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        warmup_steps: int = 0,
    ):
        self.params = params
        self.trainable = tuple(trainable)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.warmup_steps = warmup_steps
        self.t = 0
        self._m = {n: np.zeros_like(params[n].data) for n in self.trainable}
        self._v = {n: np.zeros_like(params[n].data) for n in self.trainable}

    def step(self) -> None:
        self.t += 1
        lr_t = self.lr
        if self.warmup_steps > 0:
            lr_t *= min(1.0, self.t / self.warmup_steps)
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name in self.trainable:
            p = self.params[name]
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr_t * update.astype(p.data.dtype, copy=False)


def clip_global_norm(params: ParamStore, trainable: Sequence[str], max_norm: float) -> float:
    """Scale trainable gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for name in trainable:
        g = params[name].grad
        if g is not None:
            total += float(np.sum(g.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for name in trainable:
            g = params[name].grad
            if g is not None:
                params[name].grad = g * scale
    return norm


def freeze_resolve(freeze_spec, params: ParamStore) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Split parameter names into (frozen, trainable) via glob patterns."""
    patterns = normalize_freeze_spec(freeze_spec)
    for pat in patterns:
        if not any(name_is_frozen(n, [pat]) for n in params.names()):
            logger.warning("freeze pattern %r matches no parameters", pat)
    frozen = tuple(n for n in params.names() if name_is_frozen(n, patterns))
    trainable = tuple(n for n in params.names() if n not in set(frozen))
    return frozen, trainable


# ---------------------------------------------------------------------------
# training loop


def _val_metrics(model: QeModel, pairs, gold) -> tuple[float | None, float | None]:
    preds = model.predict(pairs)
    out = []
    for fn in (metrics.pearson, metrics.spearman):
        try:
            out.append(fn(preds, gold))
        except MetricUndefinedError:
            out.append(None)
    return out[0], out[1]


def train(
    model: QeModel,
    train_examples: Sequence[EmbeddedExample],
    val_examples: Sequence[EmbeddedExample],
    cfg: TrainConfig,
) -> TrainLog:
    """Optimize the model in place; returns the log. Best-Spearman snapshot
    is restored into the model before returning."""
    cfg.validate()
    if not train_examples:
        raise ConfigError("empty train split")
    if not val_examples:
        raise ConfigError("empty validation split")

    frozen, trainable = freeze_resolve(cfg.freeze_spec, model.params)
    opt = AdamW(
        model.params,
        trainable,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        warmup_steps=cfg.warmup_steps,
    )
    rng = np.random.default_rng(cfg.seed)
    val_pairs = [(ex.source_emb, ex.translation_emb) for ex in val_examples]
    val_gold = np.array([ex.record.target01 for ex in val_examples], dtype=np.float64)

    # frozen tensors also skip gradient work entirely
    for name in frozen:
        model.params[name].requires_grad = False
    try:
        best_spearman = -math.inf
        best_epoch: int | None = None
        best_snap: dict[str, np.ndarray] | None = None
        evals_since_improve = 0
        log = TrainLog()
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(train_examples))
            batch_losses = []
            for b_idx, start in enumerate(range(0, len(order), cfg.batch_size)):
                batch = [train_examples[i] for i in order[start : start + cfg.batch_size]]
                pairs = [(ex.source_emb, ex.translation_emb) for ex in batch]
                x, mask, _ = assemble_batch(pairs, model.params, model.config)
                target = Tensor(np.array([ex.record.target01 for ex in batch], dtype=x.dtype))
                with Tape() as tape:
                    outs = model.forward_batch(x, mask, drop_rng=rng, training=True)
                    preds = [ag.sigmoid(qh) for qh, _ in outs]
                    loss = step_loss(preds, target, cfg.loss, cfg.per_step_loss_weight)
                    loss_val = float(loss.data)
                    if not math.isfinite(loss_val):
                        raise TrainAbortError(f"non-finite loss at epoch {epoch}, batch {b_idx}")
                    tape.backward(loss)
                if cfg.grad_clip:
                    clip_global_norm(model.params, trainable, cfg.grad_clip)
                opt.step()
                model.params.zero_grad()
                batch_losses.append(loss_val)

            val_pearson = val_spearman = None
            if epoch % cfg.eval_every == 0 or epoch == cfg.max_epochs:
                val_pearson, val_spearman = _val_metrics(model, val_pairs, val_gold)
                if val_spearman is not None and val_spearman > best_spearman:
                    best_spearman = val_spearman
                    best_epoch = epoch
                    best_snap = model.params.snapshot()
                    evals_since_improve = 0
                else:
                    evals_since_improve += 1
            log.entries.append(
                TrainLogEntry(
                    epoch=epoch,
                    train_loss=float(np.mean(batch_losses)),
                    val_pearson=val_pearson,
                    val_spearman=val_spearman,
                    wall_clock_s=time.perf_counter() - t0,
                )
            )
            if evals_since_improve >= cfg.patience:
                logger.info("early stop at epoch %d (no improvement in %d evals)", epoch, cfg.patience)
                break
        if best_snap is not None:
            model.params.restore(best_snap)
        log.selected_epoch = best_epoch
        return log
    finally:
        for name in frozen:
            model.params[name].requires_grad = True

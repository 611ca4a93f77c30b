"""Recursive weight-shared QE model and the unshared baseline.

Frozen per-token embeddings are projected into the model width, wrapped
with trainable boundary vectors (CLS/SEP/END) and a sinusoidal position
signal. One two-layer pre-norm transformer block is applied L times per
refinement step; each of the N refinement steps after the first re-adds
the assembled input to the carried state. A two-logit head at sequence
position 0 is read every step; sigmoid of its first logit is the quality
score. The unshared baseline runs the same layer arithmetic with distinct
weights per layer.
"""
from __future__ import annotations

import fnmatch
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, NumericError

logger = logging.getLogger(__name__)

NORM_EPS = 1e-6
ATTN_MASK_BIAS = -1e9

HEAD_TYPES = ("halting", "decoupled")
ARCHITECTURES = ("trm", "standard")


@dataclass
class TrmConfig:
    """Architecture hyperparameters.

    ``layers_per_cycle`` is fixed at 2: one cycle of the shared block is two
    transformer layers, so L cycles give 2*L effective layers per step.
    """

    hidden_dim: int = 512
    n_heads: int = 8
    ffn_mult: int = 4
    l_cycles: int = 6
    external_steps: int = 1
    layers_per_cycle: int = 2
    head_type: str = "halting"
    max_seq_len: int = 256
    dropout: float = 0.1
    seed: int = 0
    input_dim: int | None = None

    def __post_init__(self):
        if self.input_dim is None:
            self.input_dim = self.hidden_dim

    def validate(self) -> None:
        if self.hidden_dim <= 0 or self.hidden_dim % self.n_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} must be positive and divisible by n_heads {self.n_heads}"
            )
        if self.layers_per_cycle != 2:
            raise ConfigError("layers_per_cycle is fixed at 2")
        if not 1 <= self.l_cycles <= 6:
            raise ConfigError(f"l_cycles must be in [1, 6], got {self.l_cycles}")
        if not 1 <= self.external_steps <= 16:
            raise ConfigError(f"external_steps must be in [1, 16], got {self.external_steps}")
        if self.head_type not in HEAD_TYPES:
            raise ConfigError(f"head_type must be one of {HEAD_TYPES}, got {self.head_type!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_seq_len < 4:
            raise ConfigError("max_seq_len must fit at least one token per side plus markers")
        if self.input_dim is not None and self.input_dim <= 0:
            raise ConfigError(f"input_dim must be positive, got {self.input_dim}")

    @property
    def effective_layers(self) -> int:
        return self.layers_per_cycle * self.l_cycles

    def to_dict(self) -> dict:
        return asdict(self)


class ParamStore:
    """Ordered map of parameter name -> trainable tensor."""

    def __init__(self, tensors: dict[str, Tensor] | None = None):
        self._tensors: dict[str, Tensor] = dict(tensors or {})

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __setitem__(self, name: str, t: Tensor) -> None:
        self._tensors[name] = t

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> tuple[str, ...]:
        return tuple(self._tensors)

    def items(self):
        return self._tensors.items()

    def total_count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of all parameter arrays (for best-checkpoint tracking)."""
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, arr in snap.items():
            t = self._tensors[name]
            if t.shape != arr.shape:
                raise ConfigError(f"snapshot shape mismatch for {name}: {arr.shape} vs {t.shape}")
            t.data = arr.copy()

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None


def normalize_freeze_spec(spec) -> tuple[str, ...]:
    """Freeze spec as a tuple of glob patterns; empty strings mean nothing."""
    if spec is None:
        return ()
    if isinstance(spec, str):
        spec = [spec]
    return tuple(p for p in spec if p)


def name_is_frozen(name: str, patterns: Sequence[str]) -> bool:
    return any(fnmatch.fnmatchcase(name, p) for p in patterns)


def count_trainable(params: ParamStore, freeze_spec=()) -> int:
    """Element count over parameters not matched by the freeze patterns."""
    patterns = normalize_freeze_spec(freeze_spec)
    return sum(t.size for name, t in params.items() if not name_is_frozen(name, patterns))


# ---------------------------------------------------------------------------
# initialization


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with values beyond 2*std redrawn."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x


def _init_layer(store: dict, prefix: str, rng, d: int, f: int, dtype) -> None:
    def param(arr):
        return Tensor(arr.astype(dtype), requires_grad=True)

    # fan-in scaled init: a fixed tiny std starves attention logits of signal
    # at desk widths and the task never gets off the ground
    std = d**-0.5
    wq = _trunc_normal(rng, (d, d), std)
    store[prefix + "attn.wq"] = param(wq)
    store[prefix + "attn.bq"] = param(np.zeros(d))
    # k starts tied to q (they diverge in training): Wq@Wk^T ~ (dh/d)*I, so
    # attention scores approximate content similarity from the first step
    store[prefix + "attn.wk"] = param(wq.copy())
    store[prefix + "attn.bk"] = param(np.zeros(d))
    store[prefix + "attn.wv"] = param(_trunc_normal(rng, (d, d), std))
    store[prefix + "attn.bv"] = param(np.zeros(d))
    # residual-branch outputs start at zero so the block opens as identity
    store[prefix + "attn.wo"] = param(np.zeros((d, d)))
    store[prefix + "attn.bo"] = param(np.zeros(d))
    store[prefix + "ffn.w1"] = param(_trunc_normal(rng, (d, f), std))
    store[prefix + "ffn.b1"] = param(np.zeros(f))
    store[prefix + "ffn.w2"] = param(np.zeros((f, d)))
    store[prefix + "ffn.b2"] = param(np.zeros(d))
    store[prefix + "norm1.gain"] = param(np.ones(d))
    store[prefix + "norm2.gain"] = param(np.ones(d))


def init_params(config: TrmConfig, n_layers: int, dtype=np.float32) -> ParamStore:
    """Parameters for a model with ``n_layers`` distinct transformer layers.

    The shared model uses n_layers == layers_per_cycle (the block); the
    unshared baseline uses n_layers == depth. The name set never depends on
    L or the number of refinement steps.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    d, din, f = config.hidden_dim, config.input_dim, config.ffn_mult * config.hidden_dim

    def param(arr):
        return Tensor(arr.astype(dtype), requires_grad=True)

    store: dict[str, Tensor] = {}
    # the projection may stay frozen, so its init must already pass content
    # through at a scale comparable to the position signal
    store["embed.proj.w"] = param(_trunc_normal(rng, (din, d), din**-0.5))
    tok_std = d**-0.5
    store["embed.cls"] = param(_trunc_normal(rng, (d,), tok_std))
    store["embed.sep"] = param(_trunc_normal(rng, (d,), tok_std))
    store["embed.end"] = param(_trunc_normal(rng, (d,), tok_std))
    for i in range(n_layers):
        _init_layer(store, f"core.l{i}.", rng, d, f, dtype)
    store["core.final_norm.gain"] = param(np.ones(d))
    store["head.halt.w"] = param(_trunc_normal(rng, (d, 2), tok_std))
    store["head.halt.b"] = param(np.zeros(2))
    if config.head_type == "decoupled":
        store["head.reg.w"] = param(_trunc_normal(rng, (d, 1), tok_std))
        store["head.reg.b"] = param(np.zeros(1))
    return ParamStore(store)


def init_trm_params(config: TrmConfig, dtype=np.float32) -> ParamStore:
    return init_params(config, config.layers_per_cycle, dtype=dtype)


def init_standard_params(config: TrmConfig, depth: int, dtype=np.float32) -> ParamStore:
    if depth <= 0:
        raise ConfigError(f"standard transformer depth must be >= 1, got {depth}")
    return init_params(config, depth, dtype=dtype)


# ---------------------------------------------------------------------------
# sequence assembly


def sinusoidal_positions(n: int, d: int, dtype=np.float32) -> np.ndarray:
    """Absolute sin/cos position signal, shape (n, d)."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (idx // 2) / d)
    pe = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype)


def assemble_batch(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    params: ParamStore,
    config: TrmConfig,
) -> tuple[Tensor, np.ndarray | None, int]:
    """Build the padded model input for a batch of (source, translation) rows.

    Returns (input tensor of shape (b, S, D), key mask of shape (b, S) or
    None when no padding exists, number of truncated examples). Layout per
    example: CLS, projected source, SEP, projected translation, END. When a
    sequence exceeds max_seq_len the translation tail is dropped first.
    """
    dtype = params["embed.proj.w"].dtype
    d_in = int(params["embed.proj.w"].shape[0])
    trimmed: list[tuple[np.ndarray, np.ndarray]] = []
    n_truncated = 0
    for src, tr in pairs:
        src = np.asarray(src, dtype=dtype)
        tr = np.asarray(tr, dtype=dtype)
        if src.shape[-1] != d_in or tr.shape[-1] != d_in:
            raise ConfigError(
                f"embedding width mismatch: file rows are {src.shape[-1]}-dim, projection expects {d_in}"
            )
        s, t = len(src), len(tr)
        if s + t + 3 > config.max_seq_len:
            t_keep = max(0, config.max_seq_len - s - 3)
            s_keep = min(s, config.max_seq_len - 3)
            if t_keep < t or s_keep < s:
                n_truncated += 1
                tr = tr[:t_keep]
                src = src[:s_keep]
        trimmed.append((src, tr))
    if n_truncated:
        logger.warning("truncated %d/%d sequences to max_seq_len=%d", n_truncated, len(pairs), config.max_seq_len)

    lengths = [len(s) + len(t) + 3 for s, t in trimmed]
    b, cap = len(trimmed), max(lengths)
    x_in = np.zeros((b, cap, d_in), dtype=dtype)
    specials = np.zeros((b, cap, 3), dtype=dtype)
    mask = np.zeros((b, cap), dtype=bool)
    for i, (src, tr) in enumerate(trimmed):
        s, t = len(src), len(tr)
        x_in[i, 1 : 1 + s] = src
        x_in[i, 2 + s : 2 + s + t] = tr
        specials[i, 0, 0] = 1.0
        specials[i, 1 + s, 1] = 1.0
        specials[i, 2 + s + t, 2] = 1.0
        mask[i, : s + t + 3] = True

    tok = ag.concat(
        [params["embed.cls"].reshape(1, -1), params["embed.sep"].reshape(1, -1), params["embed.end"].reshape(1, -1)],
        axis=0,
    )
    x = ag.add(ag.matmul(Tensor(x_in), params["embed.proj.w"]), ag.matmul(Tensor(specials), tok))
    x = ag.add(x, Tensor(sinusoidal_positions(cap, config.hidden_dim, dtype)))
    return x, (mask if not mask.all() else None), n_truncated


def assemble_sequence(source_emb: np.ndarray, translation_emb: np.ndarray, params: ParamStore, config: TrmConfig) -> Tensor:
    """Single-example assembly; shape ((s + t + 3), D) after any truncation."""
    x, _, _ = assemble_batch([(source_emb, translation_emb)], params, config)
    return x.reshape(x.shape[1], x.shape[2])


def _mask_to_bias(mask: np.ndarray | None, dtype) -> Tensor | None:
    if mask is None:
        return None
    bias = np.where(mask, 0.0, ATTN_MASK_BIAS).astype(dtype)
    return Tensor(bias[:, None, None, :])


# ---------------------------------------------------------------------------
# forward


class LayerCounter:
    """Counts individual transformer-layer applications."""

    def __init__(self):
        self.layers = 0

    def bump(self) -> None:
        self.layers += 1


def _attention(x: Tensor, params: ParamStore, prefix: str, config: TrmConfig, bias: Tensor | None) -> Tensor:
    d, h = config.hidden_dim, config.n_heads
    dh = d // h
    lead = x.shape[:-2]
    s = x.shape[-2]

    def heads(name, bname):
        y = ag.add(ag.matmul(x, params[prefix + name]), params[prefix + bname])
        return ag.transpose(y.reshape(lead + (s, h, dh)), -3, -2)

    q = heads("attn.wq", "attn.bq")
    k = heads("attn.wk", "attn.bk")
    v = heads("attn.wv", "attn.bv")
    scores = ag.matmul(q, ag.transpose(k))
    if bias is not None:
        scores = ag.add(scores, bias)
    probs = ag.softmax_rows(scores, scale=1.0 / math.sqrt(dh))
    ctx = ag.transpose(ag.matmul(probs, v), -3, -2).reshape(lead + (s, d))
    return ag.add(ag.matmul(ctx, params[prefix + "attn.wo"]), params[prefix + "attn.bo"])


def _layer_forward(
    x: Tensor,
    params: ParamStore,
    prefix: str,
    config: TrmConfig,
    bias: Tensor | None = None,
    counter: LayerCounter | None = None,
    drop_rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    if counter is not None:
        counter.bump()
    use_dropout = training and config.dropout > 0.0 and drop_rng is not None

    h = ag.rms_norm(x, params[prefix + "norm1.gain"], NORM_EPS)
    a = _attention(h, params, prefix, config, bias)
    if use_dropout:
        a = ag.dropout(a, config.dropout, drop_rng)
    x = ag.add(x, a)

    h = ag.rms_norm(x, params[prefix + "norm2.gain"], NORM_EPS)
    f = ag.gelu(ag.add(ag.matmul(h, params[prefix + "ffn.w1"]), params[prefix + "ffn.b1"]))
    f = ag.add(ag.matmul(f, params[prefix + "ffn.w2"]), params[prefix + "ffn.b2"])
    if use_dropout:
        f = ag.dropout(f, config.dropout, drop_rng)
    return ag.add(x, f)


def shared_block_forward(
    x: Tensor,
    params: ParamStore,
    config: TrmConfig,
    bias: Tensor | None = None,
    counter: LayerCounter | None = None,
    drop_rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    """One cycle of the shared block: the same two layers, whatever L is."""
    for i in range(config.layers_per_cycle):
        x = _layer_forward(x, params, f"core.l{i}.", config, bias, counter, drop_rng, training)
    return x


def _readout(state: Tensor, params: ParamStore, config: TrmConfig) -> tuple[Tensor, Tensor | None]:
    """Head logits at position 0: (q_halt, q_continue) as (b,) tensors."""
    h0 = state[:, 0, :]
    h0 = ag.rms_norm(h0, params["core.final_norm.gain"], NORM_EPS)
    if config.head_type == "decoupled":
        logit = ag.add(ag.matmul(h0, params["head.reg.w"]), params["head.reg.b"])
        return logit[:, 0], None
    logits = ag.add(ag.matmul(h0, params["head.halt.w"]), params["head.halt.b"])
    return logits[:, 0], logits[:, 1]


def run_steps(
    x: Tensor,
    params: ParamStore,
    config: TrmConfig,
    mask: np.ndarray | None = None,
    counter: LayerCounter | None = None,
    drop_rng: np.random.Generator | None = None,
    training: bool = False,
) -> list[tuple[Tensor, Tensor | None]]:
    """All N refinement steps on a batched input (b, S, D).

    Returns one (q_halt, q_continue) pair of (b,) tensors per step. The
    carried state starts as the assembled input; later steps re-add the
    input before recursing.
    """
    bias = _mask_to_bias(mask, x.dtype)
    state = x
    outs = []
    for step in range(1, config.external_steps + 1):
        if step > 1:
            state = ag.add(state, x)
        for cyc in range(1, config.l_cycles + 1):
            state = shared_block_forward(state, params, config, bias, counter, drop_rng, training)
            if not np.all(np.isfinite(state.data)):
                raise NumericError(f"non-finite activations at external step {step}, cycle {cyc}")
        outs.append(_readout(state, params, config))
    return outs


def _sigmoid_scalar(x: float) -> float:
    e = math.exp(-abs(x))
    return 1.0 / (1.0 + e) if x >= 0 else e / (1.0 + e)


@dataclass(frozen=True)
class QHeadOutput:
    """Per-step head readout. ``q_continue`` is None for the decoupled head."""

    q_halt: float
    q_continue: float | None

    @property
    def quality(self) -> float:
        return _sigmoid_scalar(self.q_halt)


def _collect_head_outputs(step_outs) -> tuple[float, list[QHeadOutput]]:
    per_step = [
        QHeadOutput(float(qh.data[0]), float(qc.data[0]) if qc is not None else None)
        for qh, qc in step_outs
    ]
    return per_step[-1].quality, per_step


def trm_forward(
    x_seq: Tensor,
    config: TrmConfig,
    params: ParamStore,
    counter: LayerCounter | None = None,
) -> tuple[float, list[QHeadOutput]]:
    """Full recursive forward on one assembled sequence (S, D)."""
    x = x_seq.reshape(1, x_seq.shape[0], x_seq.shape[1])
    outs = run_steps(x, params, config, counter=counter)
    return _collect_head_outputs(outs)


def standard_transformer_forward(
    x_seq: Tensor,
    depth: int,
    params: ParamStore,
    config: TrmConfig,
    counter: LayerCounter | None = None,
) -> tuple[float, list[QHeadOutput]]:
    """Unshared baseline: ``depth`` distinct layers applied once, same head."""
    if depth <= 0:
        raise ConfigError(f"standard transformer depth must be >= 1, got {depth}")
    for i in range(depth):
        if f"core.l{i}.attn.wq" not in params:
            raise ConfigError(f"missing parameters for layer {i} (depth {depth})")
    x = x_seq.reshape(1, x_seq.shape[0], x_seq.shape[1])
    state = x
    for i in range(depth):
        state = _layer_forward(state, params, f"core.l{i}.", config, counter=counter)
        if not np.all(np.isfinite(state.data)):
            raise NumericError(f"non-finite activations at layer {i}")
    return _collect_head_outputs([_readout(state, params, config)])


def decoupled_head_forward(x0: Tensor, params: ParamStore) -> float:
    """Decoupled regression head on a position-0 state vector (D,)."""
    h0 = ag.rms_norm(x0.reshape(1, -1), params["core.final_norm.gain"], NORM_EPS)
    logit = ag.add(ag.matmul(h0, params["head.reg.w"]), params["head.reg.b"])
    return float(ag.sigmoid(logit).data[0, 0])


# ---------------------------------------------------------------------------
# model wrapper


class QeModel:
    """Config + parameters for either architecture, with batched forward."""

    def __init__(
        self,
        config: TrmConfig,
        architecture: str = "trm",
        standard_depth: int = 8,
        params: ParamStore | None = None,
        dtype=np.float32,
    ):
        if architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}, got {architecture!r}")
        config.validate()
        self.config = config
        self.architecture = architecture
        self.standard_depth = standard_depth
        if params is None:
            if architecture == "trm":
                params = init_trm_params(config, dtype=dtype)
            else:
                params = init_standard_params(config, standard_depth, dtype=dtype)
        self.params = params

    def forward_batch(
        self,
        x: Tensor,
        mask: np.ndarray | None = None,
        counter: LayerCounter | None = None,
        drop_rng: np.random.Generator | None = None,
        training: bool = False,
    ) -> list[tuple[Tensor, Tensor | None]]:
        """Per-step (q_halt, q_continue) logits, each of shape (batch,)."""
        if self.architecture == "trm":
            return run_steps(x, self.params, self.config, mask, counter, drop_rng, training)
        bias = _mask_to_bias(mask, x.dtype)
        state = x
        for i in range(self.standard_depth):
            state = _layer_forward(state, self.params, f"core.l{i}.", self.config, bias, counter, drop_rng, training)
            if not np.all(np.isfinite(state.data)):
                raise NumericError(f"non-finite activations at layer {i}")
        return [_readout(state, self.params, self.config)]

    def predict(self, pairs: Sequence[tuple[np.ndarray, np.ndarray]], batch_size: int = 64) -> np.ndarray:
        """Deterministic inference: final-step quality per (source, translation)."""
        preds = np.empty(len(pairs), dtype=np.float64)
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            x, mask, _ = assemble_batch(chunk, self.params, self.config)
            q_halt, _ = self.forward_batch(x, mask)[-1]
            preds[start : start + len(chunk)] = ag.sigmoid(q_halt).data
        return preds

    def trainable_count(self, freeze_spec=()) -> int:
        return count_trainable(self.params, freeze_spec)

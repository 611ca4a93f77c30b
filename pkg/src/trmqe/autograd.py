"""Dense tensors with tape-based reverse-mode automatic differentiation.

Covers exactly the operation set the recursive QE head needs: (batched)
matmul, broadcast add/mul, transpose/reshape/slice/concat, row softmax,
RMS normalization, sigmoid/GELU/log, sums, means, and dropout. Storage is
row-major numpy, float32 by default; float64 is used for gradient checks.

Ops record a backward rule while a ``Tape`` is active (define-by-run);
``Tape.backward`` replays the rules in reverse order and accumulates into
``.grad`` of every reachable tensor with ``requires_grad``. The tape is
cleared once backward finishes. A tape is confined to one thread;
independent tapes may run in parallel threads or processes with no shared
mutable state. Forward results are bit-deterministic for a fixed input and
thread configuration (numpy reduction order is fixed).
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_GELU_K = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715


class Tensor:
    """A dense float32/float64 array, optionally tracking gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        else:
            arr = np.asarray(data)
            if arr.dtype not in _FLOAT_DTYPES:
                arr = arr.astype(np.float32)
        if arr.dtype not in _FLOAT_DTYPES:
            raise TypeError(f"tensors are float32/float64 only, got {arr.dtype}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # operator sugar; all dispatch to the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return scale(self, other) if isinstance(other, (int, float)) else mul(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, ax0: int = -2, ax1: int = -1):
        return transpose(self, ax0, ax1)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# tape


class Tape:
    """Ordered record of ops; replaying it in reverse yields the chain rule."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._nodes.append((out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

        ``loss`` must be scalar. The tape is cleared afterwards.
        """
        try:
            if loss.size != 1:
                raise ShapeError(f"backward target must be scalar, got shape {loss.shape}")
            grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
            leaves: dict[int, Tensor] = {id(loss): loss}
            for out, inputs, rule in reversed(self._nodes):
                g = grads.pop(id(out), None)
                leaves.pop(id(out), None)
                if g is None:
                    continue  # branch that never reached the loss
                if out.requires_grad:
                    out.grad = g if out.grad is None else out.grad + g
                for t, tg in zip(inputs, rule(g)):
                    if tg is None or not t.requires_grad:
                        continue
                    k = id(t)
                    if k in grads:
                        grads[k] = grads[k] + tg
                    else:
                        grads[k] = tg
                        leaves[k] = t
            for k, t in leaves.items():
                t.grad = grads[k] if t.grad is None else t.grad + grads[k]
        finally:
            self._nodes.clear()


_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = _LOCAL.stack = []
    return stack


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    stack = _tape_stack()
    if stack and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        stack[-1].record(out, inputs, backward)
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _same_dtype(*ts: Tensor) -> None:
    d = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != d:
            raise TypeError(f"mixed tensor dtypes: {d} vs {t.data.dtype}")


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dims broadcast, operands must be >=2-D."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    _same_dtype(a, b)
    try:
        out = Tensor(np.matmul(a.data, b.data))
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions incompatible: {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _sum_to_shape(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _sum_to_shape(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    out = Tensor(a.data + b.data)

    def backward(g):
        return _sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)

    return _record(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    out = Tensor(a.data - b.data)

    def backward(g):
        return _sum_to_shape(g, a.shape), _sum_to_shape(-g, b.shape)

    return _record(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    _same_dtype(a, b)
    out = Tensor(a.data * b.data)

    def backward(g):
        return _sum_to_shape(g * b.data, a.shape), _sum_to_shape(g * a.data, b.shape)

    return _record(out, (a, b), backward)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(x.data * s)

    def backward(g):
        return (g * s,)

    return _record(out, (x,), backward)


def transpose(x: Tensor, ax0: int = -2, ax1: int = -1) -> Tensor:
    out = Tensor(np.swapaxes(x.data, ax0, ax1))

    def backward(g):
        return (np.swapaxes(g, ax0, ax1),)

    return _record(out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        return (g.reshape(x.shape),)

    return _record(out, (x,), backward)


def slice_(x: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing with gradient scatter on backward."""
    out = Tensor(x.data[key])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return _record(out, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    _same_dtype(*tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tensors, backward)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=False),)

    return _record(out, (x,), backward)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))
    count = x.size if axis is None else x.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype, copy=False),)

    return _record(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic; output in (0,1) up to float rounding."""
    z = x.data
    e = np.exp(-np.abs(z))
    out = Tensor(np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)))

    def backward(g):
        return (g * out.data * (1.0 - out.data),)

    return _record(out, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    z = x.data
    z2 = z * z  # plain multiplies: np.power is an order of magnitude slower here
    t = np.tanh(_GELU_K * (z + _GELU_C * z2 * z))
    out = Tensor(0.5 * z * (1.0 + t))

    def backward(g):
        du = _GELU_K * (1.0 + 3.0 * _GELU_C * z2)
        return (g * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * du),)

    return _record(out, (x,), backward)


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))

    def backward(g):
        return (g / x.data,)

    return _record(out, (x,), backward)


def softmax_rows(x: Tensor, scale: float = 1.0) -> Tensor:
    """Row-stabilized softmax over the last axis of ``scale * x``."""
    z = x.data * scale
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = Tensor(e / e.sum(axis=-1, keepdims=True))

    def backward(g):
        s = (g * out.data).sum(axis=-1, keepdims=True)
        return (scale * out.data * (g - s),)

    return _record(out, (x,), backward)


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """Scale each row (last axis) to unit root-mean-square, then apply gain."""
    n = x.shape[-1]
    if gain.shape != (n,):
        raise ShapeError(f"rms_norm gain shape {gain.shape} != last dim ({n},)")
    _same_dtype(x, gain)
    ms = np.mean(x.data * x.data, axis=-1, keepdims=True)
    r = np.sqrt(ms + eps)
    xhat = x.data / r
    out = Tensor(xhat * gain.data)

    def backward(g):
        ggain = gx = None
        if gain.requires_grad:
            ggain = (g * xhat).reshape(-1, n).sum(axis=0)
        if x.requires_grad:
            gc = g * gain.data
            dot = (gc * x.data).sum(axis=-1, keepdims=True)
            gx = gc / r - x.data * (dot / (n * r**3))
        return gx, ggain

    return _record(out, (x, gain), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    mask = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out = Tensor(x.data * mask)

    def backward(g):
        return (g * mask,)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must return a scalar tensor and be deterministic. All inputs must
    be float64 (the h=1e-5 step is meaningless in float32). Error metric per
    coordinate: |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs (64-bit mode)")
        t.grad = None
    with Tape() as tape:
        out = f(*inputs)
        if out.size != 1:
            raise ShapeError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
        tape.backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    for t in inputs:
        t.grad = None

    def eval_scalar() -> float:
        return float(f(*inputs).data.reshape(()))

    max_err = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        aflat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = eval_scalar()
            flat[i] = orig - h
            fm = eval_scalar()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            err = abs(aflat[i] - num) / max(1e-8, abs(aflat[i]) + abs(num))
            max_err = max(max_err, err)
    return max_err

"""Minimal reverse-mode automatic differentiation over dense fp64 arrays.

Every differentiable op records a node carrying its parents and a backward
closure. Nodes get a monotonically increasing ``trace_id`` at creation, so
creation order is a valid topological order; :func:`backward` collects the
nodes reachable from a scalar loss, replays them in reverse id order, and
consumes them.

Arrays are ``(..., m, n)``. Leading axes are treated as a batch; elementwise
ops accept operands whose shapes are equal or where one is a trailing suffix of
the other (a row vector across rows, a per-head bias across a batch, ...).
"""

from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ParameterSet",
    "Adam",
    "ShapeError",
    "TraceError",
    "no_grad",
    "tensor",
    "constant",
    "matmul",
    "add",
    "sub",
    "mul",
    "relu",
    "tanh",
    "exp",
    "log",
    "square",
    "softmax_rows",
    "layer_norm",
    "concat_cols",
    "reshape",
    "transpose",
    "take_rows",
    "minimum",
    "clamp",
    "sum_all",
    "mean_all",
    "sum_axis",
    "mean_axis",
    "backward",
    "numerical_grad",
    "gradcheck",
    "relative_error",
    "glorot_uniform",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class TraceError(RuntimeError):
    """Misuse of a computation trace (non-scalar loss, consumed trace)."""


_ids = itertools.count()
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable trace recording in the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "trace_id", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.trace_id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _raise_item(t: Tensor) -> float:
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: tuple[Tensor, ...], rule: Callable) -> Tensor:
    if not _grad_enabled() or not any(p.requires_grad for p in parents):
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    out._parents = parents
    out._backward = rule
    return out


# ---------------------------------------------------------------------------
# shape helpers


def _check_suffix(a: tuple, b: tuple, op: str) -> None:
    if a == b:
        return
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if len(short) == len(long_) or long_[len(long_) - len(short):] != short:
        raise ShapeError(f"{op}: incompatible shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead > 0 else g


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes are a shared batch.

    ``b`` may be a plain 2-D matrix applied to every batch element (a weight),
    or ``a`` may be a 2-D matrix applied on the left of every batch element
    (an aggregation operator such as the normalized adjacency).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    if a.ndim < 2 or b.ndim < 2 or sa[-1] != sb[-2]:
        raise ShapeError(f"matmul: cannot multiply {sa} by {sb}")
    if a.ndim > 2 and b.ndim > 2 and sa[:-2] != sb[:-2]:
        raise ShapeError(f"matmul: batch dims differ for {sa} and {sb}")
    ad, bd = a.data, b.data
    flat = b.ndim == 2 and a.ndim > 2
    if flat:
        # one large GEMM instead of a stack of small ones
        a2 = ad.reshape(-1, sa[-1])
        out = (a2 @ bd).reshape(sa[:-1] + (sb[-1],))
    else:
        out = ad @ bd

    def rule(g):
        ga = gb = None
        if flat:
            g2 = g.reshape(-1, sb[-1])
            if a.requires_grad:
                ga = (g2 @ bd.T).reshape(sa)
            if b.requires_grad:
                gb = a2.T @ g2
        elif a.ndim == 2 and b.ndim > 2:
            if a.requires_grad:
                ga = (g @ np.swapaxes(bd, -1, -2)).sum(axis=tuple(range(g.ndim - 2)))
            if b.requires_grad:
                gb = ad.T @ g
        else:
            if a.requires_grad:
                ga = g @ np.swapaxes(bd, -1, -2)
            if b.requires_grad:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _record(out, (a, b), rule)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape
    return _record(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)))


def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _record(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _record(np.log(x), (a,), lambda g: (g / x,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _record(x * x, (a,), lambda g: (2.0 * g * x,))


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return _record(y, (a,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    n = a.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {n}")
    x = a.data
    mu = np.add.reduce(x, axis=-1, keepdims=True) / n
    xc = x - mu
    inv = 1.0 / np.sqrt(np.add.reduce(xc * xc, axis=-1, keepdims=True) / n + eps)
    xhat = xc * inv
    gd = gain.data

    def rule(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, n)
        return dx, (g2 * xhat.reshape(-1, n)).sum(axis=0), g2.sum(axis=0)

    return _record(xhat * gd + bias.data, (a, gain, bias), rule)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_cols: row shapes differ for {a.shape} and {b.shape}")
    p = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return _record(out, (a, b), lambda g: (g[..., :p], g[..., p:]))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)

    def rule(g):
        inv = sorted(range(len(axes)), key=axes.__getitem__)
        return (g.transpose(inv),)

    return _record(a.data.transpose(axes), (a,), rule)


def take_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Embedding lookup ``table[index]``; repeated indices accumulate."""
    index = np.asarray(index, dtype=np.intp)
    width = table.shape[1:]

    def rule(g):
        gt = np.zeros(table.shape)
        np.add.at(gt, index.reshape(-1), g.reshape((-1,) + width))
        return (gt,)

    return _record(table.data[index], (table,), rule)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min of equal-shaped tensors; ties route gradient to ``a``."""
    if a.shape != b.shape:
        raise ShapeError(f"minimum: shapes differ {a.shape} vs {b.shape}")
    pick_a = a.data <= b.data
    return _record(np.where(pick_a, a.data, b.data), (a, b),
                   lambda g: (g * pick_a, g * ~pick_a))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _record(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _record(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return _record(np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, g / n),))


def sum_axis(a: Tensor, axis: int) -> Tensor:
    shape = a.shape
    ax = axis % a.ndim
    return _record(a.data.sum(axis=ax), (a,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),))


def mean_axis(a: Tensor, axis: int) -> Tensor:
    shape = a.shape
    ax = axis % a.ndim
    n = shape[ax]
    return _record(a.data.mean(axis=ax), (a,),
                   lambda g: (np.broadcast_to(np.expand_dims(g / n, ax), shape).copy(),))


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from ``loss`` and consume the trace.

    Leaf gradients accumulate across calls until zeroed; the recorded nodes are
    released, so a second call on the same loss raises :class:`TraceError`.
    """
    if loss.data.size != 1:
        raise TraceError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise TraceError("trace already consumed by a previous backward call")
    if not loss.requires_grad:
        raise TraceError("loss does not depend on any tensor requiring grad")

    nodes = []
    seen = {id(loss)}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._consumed:
            raise TraceError("trace already consumed by a previous backward call")
        if t._backward is None:
            continue
        nodes.append(t)
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    nodes.sort(key=lambda t: t.trace_id, reverse=True)

    pending: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in nodes:
        g = pending.pop(id(node), None)
        rule, parents = node._backward, node._parents
        node._backward, node._parents, node._consumed = None, (), True
        if g is None:
            continue
        node.grad = g
        for p, pg in zip(parents, rule(g)):
            if not p.requires_grad:
                continue
            if p._backward is None:
                p.grad = pg.copy() if p.grad is None else p.grad + pg
            else:
                key = id(p)
                prev = pending.get(key)
                pending[key] = pg if prev is None else prev + pg


# ---------------------------------------------------------------------------
# parameters and optimization


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class ParameterSet:
    """Named parameters in deterministic (insertion) order."""

    def __init__(self, params: Iterable[Parameter] = ()):
        self._params: dict[str, Parameter] = {}
        for p in params:
            self.add(p)

    def add(self, p: Parameter) -> Parameter:
        if p.name in self._params:
            raise KeyError(f"duplicate parameter name {p.name!r}")
        self._params[p.name] = p
        return p

    def new(self, name: str, data) -> Parameter:
        return self.add(Parameter(data, name))

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def count(self) -> int:
        """Total number of scalar entries."""
        return sum(p.data.size for p in self)

    def zero_grad(self) -> None:
        for p in self:
            p.grad = None

    def subset(self, prefix: str) -> ParameterSet:
        return ParameterSet(p for p in self if p.name.startswith(prefix))

    def copy(self) -> ParameterSet:
        return ParameterSet(Parameter(p.data.copy(), p.name) for p in self)

    def load_values(self, other: ParameterSet) -> None:
        for p in self:
            p.data = other[p.name].data.copy()

    def grad_norm(self) -> float:
        return math.sqrt(sum(float((p.grad * p.grad).sum()) for p in self if p.grad is not None))


class Adam:
    """Adam with bias correction and global l2-norm gradient clipping.

    Moments live on the optimizer, keyed by parameter name. Missing gradients
    count as zero. Gradients are cleared after every step.
    """

    def __init__(self, params: ParameterSet, lr: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, grad_clip: float | None = None):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}
        self.last_grad_norm = 0.0

    def step(self) -> None:
        norm = self.params.grad_norm()
        self.last_grad_norm = norm
        scale = 1.0
        if self.grad_clip is not None and norm > self.grad_clip:
            scale = self.grad_clip / norm
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in self.params:
            g = np.zeros_like(p.data) if p.grad is None else p.grad * scale
            m = self.m[p.name]
            v = self.v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None


# ---------------------------------------------------------------------------
# gradient verification


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def numerical_grad(fn: Callable[[], Tensor], target: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` with respect to ``target.data``."""
    if not target.data.flags.c_contiguous:
        target.data = target.data.copy()
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
    return grad


def gradcheck(fn: Callable[[], Tensor], targets: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    for t in targets:
        t.grad = None
    loss = fn()
    backward(loss)
    worst = 0.0
    for t in targets:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        worst = max(worst, relative_error(analytic, numerical_grad(fn, t, h)))
    return worst

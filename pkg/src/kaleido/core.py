"""Dense numpy tensors with a reverse-mode gradient tape.

Only the handful of primitives needed by masked MLPs, layer norm, the QMIX
mixer and the TD/policy losses are provided. Every primitive records an
exact backward rule; broadcasting is supported and gradients are summed back
onto the operand's shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.special import expit

LN_EPS = 1e-5
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteError(FloatingPointError):
    """Raised when a recorded op produces NaN or Inf."""


class Tensor:
    __slots__ = ("data", "tape", "parents", "backward_fn", "grad", "sink")

    def __init__(self, data, tape: "Tape | None" = None, parents=(), backward_fn=None):
        self.data = np.asarray(data)
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None
        self.sink = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, tracked={self.tracked})"

    # operator sugar keeps loss expressions readable
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


class Tape:
    """Ordered record of primitive ops.

    Ops are appended in execution order, so walking the list backwards is a
    reverse topological order and each node is visited once.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Tensor] = []
        self.check_finite = check_finite

    def __len__(self):
        return len(self.nodes)

    def __bool__(self):
        # an empty tape is still a tape
        return True

    def watch(self, store: "ParamStore", name: str) -> Tensor:
        """Leaf tensor whose gradient is accumulated into ``store``."""
        t = Tensor(store[name].value, tape=self)
        t.sink = (store, name)
        self.nodes.append(t)
        return t

    def leaf(self, data) -> Tensor:
        """Tracked leaf not backed by a store (used by gradient checks)."""
        t = Tensor(np.asarray(data), tape=self)
        self.nodes.append(t)
        return t

    def record(self, data, parents, backward_fn) -> Tensor:
        if self.check_finite and not np.isfinite(data).all():
            raise NonFiniteError("recorded op produced non-finite values")
        t = Tensor(data, tape=self, parents=parents, backward_fn=backward_fn)
        self.nodes.append(t)
        return t

    def backward(self, loss: Tensor) -> None:
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            if node.backward_fn is not None:
                grads = node.backward_fn(g)
                for parent, pg in zip(node.parents, grads):
                    if pg is None or parent.tape is None:
                        continue
                    if parent.grad is None:
                        parent.grad = pg
                    else:
                        parent.grad = parent.grad + pg
            elif node.sink is not None:
                store, name = node.sink
                store[name].grad += g
        self.clear()

    def clear(self) -> None:
        for node in self.nodes:
            # bare leaves keep their gradient for the caller to read
            if node.backward_fn is not None or node.sink is not None:
                node.grad = None
            node.parents = ()
            node.backward_fn = None
        self.nodes = []


def backward(loss: Tensor) -> None:
    """Populate the grad slots of every store watched while computing ``loss``."""
    if loss.tape is None:
        raise ValueError("loss does not depend on any tracked parameter")
    loss.tape.backward(loss)


def _tape_of(*ts: Tensor) -> "Tape | None":
    for t in ts:
        if t.tape is not None:
            return t.tape
    return None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, backward_fn) -> Tensor:
    tape = _tape_of(*parents)
    if tape is None:
        return Tensor(data)
    return tape.record(data, parents, backward_fn)


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa) if a.tracked else None,
                            _unbroadcast(g, sb) if b.tracked else None))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa) if a.tracked else None,
                            _unbroadcast(-g, sb) if b.tracked else None))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape) if a.tracked else None,
                            _unbroadcast(g * ad, bd.shape) if b.tracked else None))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def absolute(a) -> Tensor:
    """|x| with subgradient 0 at x == 0."""
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis), 1.0 / n)


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")

    def bw(g):
        ga = gb = None
        if a.tracked:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.tracked:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), bw)


def record_linear(x, W, b) -> Tensor:
    """y = x W + b.

    ``W`` may carry leading batch axes (one weight matrix per agent or per
    ensemble member); they broadcast against the leading axes of ``x``.
    """
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.shape[-1] != b.shape[-1]:
        raise ValueError(f"bias shape {b.shape} does not match weight {W.shape}")
    return add(matmul(x, W), b)


# ---------------------------------------------------------------- activations

def relu(x) -> Tensor:
    """max(x, 0); the derivative at 0 is taken as 0."""
    x = as_tensor(x)
    live = x.data > 0
    return _make(np.maximum(x.data, 0), (x,), lambda g: (g * live,))


def elu(x) -> Tensor:
    """x for x > 0, exp(x) - 1 otherwise."""
    x = as_tensor(x)
    neg = np.minimum(x.data, 0.0)
    e = np.exp(neg)
    live = x.data > 0
    return _make(np.where(live, x.data, e - 1.0), (x,), lambda g: (g * np.where(live, 1.0, e),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = sigmoid_np(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


ACTIVATIONS = {"relu": relu, "elu": elu, "tanh": tanh, "sigmoid": sigmoid}


def record_activation(x, kind: str) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def record_layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    """Standardize the last axis, then apply elementwise gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    xd = x.data
    H = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def bw(g):
        gx = ggain = gbias = None
        if x.tracked:
            gh = g * gd
            gx = inv / H * (H * gh - gh.sum(-1, keepdims=True)
                            - xhat * (gh * xhat).sum(-1, keepdims=True))
        if gain.tracked:
            ggain = _unbroadcast(g * xhat, gd.shape)
        if bias.tracked:
            gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return _make(out, (x, gain, bias), bw)


# ---------------------------------------------------------------- shaping

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),))


def concat(xs: Iterable, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([x.data for x in xs], axis=axis)
    return _make(out, tuple(xs), lambda g: tuple(np.split(g, splits, axis=axis)))


def gather(x, index: np.ndarray) -> Tensor:
    """Pick ``x[..., index]`` along the last axis (index has x's shape minus the last axis)."""
    x = as_tensor(x)
    idx = np.asarray(index)[..., None]
    out = np.take_along_axis(x.data, idx, axis=-1)[..., 0]
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        return (full,)

    return _make(out, (x,), bw)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    """x[start:stop] along ``axis``."""
    x = as_tensor(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _make(x.data[idx], (x,), bw)


def custom_op(data, parents, backward_fn) -> Tensor:
    """Record an op defined elsewhere (e.g. the soft-threshold transform)."""
    return _make(data, tuple(as_tensor(p) for p in parents), backward_fn)


# ---------------------------------------------------------------- parameters

@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray


@dataclass
class ParamStore:
    """Named parameters with gradient slots and Adam moments."""

    dtype: type = np.float64
    entries: dict = field(default_factory=dict)
    step_count: int = 0

    def add(self, name: str, value) -> Param:
        if name in self.entries:
            raise KeyError(f"duplicate parameter {name!r}")
        v = np.array(value, dtype=self.dtype)
        p = Param(v, np.zeros_like(v), np.zeros_like(v), np.zeros_like(v))
        self.entries[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.entries if n.startswith(prefix)]

    def value(self, name: str) -> np.ndarray:
        return self.entries[name].value

    def zero_grad(self) -> None:
        for p in self.entries.values():
            p.grad.fill(0.0)

    def num_params(self, prefix: str = "") -> int:
        return sum(p.value.size for n, p in self.entries.items() if n.startswith(prefix))

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.entries.values())))

    def clip_grad_norm(self, max_norm: float) -> float:
        norm = self.grad_norm()
        if max_norm > 0 and norm > max_norm:
            c = max_norm / (norm + 1e-6)
            for p in self.entries.values():
                p.grad *= c
        return norm

    def copy(self) -> "ParamStore":
        out = ParamStore(self.dtype)
        for n, p in self.entries.items():
            out.entries[n] = Param(p.value.copy(), np.zeros_like(p.value),
                                   np.zeros_like(p.value), np.zeros_like(p.value))
        return out

    def snapshot(self) -> dict:
        return {n: p.value.copy() for n, p in self.entries.items()}


def adam_step(store: ParamStore, lr: float, names: Iterable[str] | None = None) -> None:
    """Bias-corrected Adam update (beta1=0.9, beta2=0.999, eps=1e-8)."""
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    keys = store.entries.keys() if names is None else names
    for n in keys:
        p = store.entries[n]
        g = p.grad
        p.m *= ADAM_BETA1
        p.m += (1.0 - ADAM_BETA1) * g
        p.v *= ADAM_BETA2
        p.v += (1.0 - ADAM_BETA2) * (g * g)
        p.value -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + ADAM_EPS)


def finite_difference_gradient(f: Callable[[], float], store: ParamStore, eps: float = 1e-5,
                               names: Iterable[str] | None = None) -> dict:
    """Central-difference estimate of d f / d param for every coordinate.

    ``f`` reads the store's current values; they are perturbed in place and
    restored exactly afterwards.
    """
    out = {}
    for n in (store.entries if names is None else names):
        val = store[n].value
        g = np.zeros_like(val)
        flat, gflat = val.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = float(f())
            flat[k] = orig - eps
            fm = float(f())
            flat[k] = orig
            gflat[k] = (fp - fm) / (2.0 * eps)
        out[n] = g
    return out

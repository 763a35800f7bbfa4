"""Reverse-mode automatic differentiation over dense float64 tensors.

Every operation records a backward closure on its output tensor; calling
``backward`` on a scalar loss replays the closures in reverse recording
order. Only the ops needed by the model zoo and the mask estimator are
provided. Single-threaded per graph: tensors and the graphs they span must
not be shared between concurrently running sessions.
"""

from __future__ import annotations

import itertools
import json
import math

import numpy as np

_BCE_EPS = 1e-12

# Monotone id used to replay closures in exact reverse recording order.
_op_counter = itertools.count()

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense float64 array plus the bookkeeping for reverse-mode autodiff."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward", "_seq")

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = 0

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        """New leaf sharing this buffer, cut off from the graph."""
        return Tensor(self.values, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    # Operator sugar used throughout the model code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        return hadamard(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out, parents, backward):
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._seq = next(_op_counter)
    return out


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _require_shapes(op, ok, *shapes):
    if not ok:
        raise ValueError(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.values + b.values)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.values.shape))
        b._accumulate(_unbroadcast(g, b.values.shape))

    return _record(out, (a, b), backward)


def subtract(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.values - b.values)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.values.shape))
        b._accumulate(-_unbroadcast(g, b.values.shape))

    return _record(out, (a, b), backward)


def hadamard(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.values * b.values)

    def backward(g):
        a._accumulate(_unbroadcast(g * b.values, a.values.shape))
        b._accumulate(_unbroadcast(g * a.values, b.values.shape))

    return _record(out, (a, b), backward)


def scale(a, c):
    """Multiply by a python scalar constant (not differentiated through)."""
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.values * c)

    def backward(g):
        a._accumulate(g * c)

    return _record(out, (a,), backward)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _require_shapes("matmul", a.values.ndim >= 2 and b.values.ndim >= 2,
                    a.values.shape, b.values.shape)
    try:
        out = Tensor(np.matmul(a.values, b.values))
    except ValueError as exc:
        raise ValueError(f"matmul: incompatible shapes {a.values.shape} vs {b.values.shape}") from exc

    def backward(g):
        a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.values, -1, -2)), a.values.shape))
        b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.values, -1, -2), g), b.values.shape))

    return _record(out, (a, b), backward)


def sigmoid(a):
    a = _as_tensor(a)
    # Stable two-branch evaluation; values stay strictly inside (0, 1).
    v = a.values
    out_v = np.empty_like(v)
    pos = v >= 0
    out_v[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out_v[~pos] = ev / (1.0 + ev)
    out = Tensor(out_v)

    def backward(g):
        a._accumulate(g * out_v * (1.0 - out_v))

    return _record(out, (a,), backward)


def tanh(a):
    a = _as_tensor(a)
    out_v = np.tanh(a.values)
    out = Tensor(out_v)

    def backward(g):
        a._accumulate(g * (1.0 - out_v * out_v))

    return _record(out, (a,), backward)


def relu(a):
    a = _as_tensor(a)
    mask = a.values > 0
    out = Tensor(np.where(mask, a.values, 0.0))

    def backward(g):
        a._accumulate(g * mask)

    return _record(out, (a,), backward)


def tabs(a):
    a = _as_tensor(a)
    sign = np.sign(a.values)
    out = Tensor(np.abs(a.values))

    def backward(g):
        a._accumulate(g * sign)

    return _record(out, (a,), backward)


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.values.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.values.shape).copy())

    return _record(out, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.values.mean(axis=axis, keepdims=keepdims))
    count = a.values.size // max(out.values.size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.values.shape) / count)

    return _record(out, (a,), backward)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.values for t in tensors], axis=axis))
    sizes = [t.values.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return _record(out, tuple(tensors), backward)


def tslice(a, key):
    """Basic indexing (ints/slices); gradient scatters back into zeros."""
    a = _as_tensor(a)
    out = Tensor(a.values[key])

    def backward(g):
        full = np.zeros_like(a.values)
        full[key] += g
        a._accumulate(full)

    return _record(out, (a,), backward)


def transpose(a, axes=None):
    a = _as_tensor(a)
    out = Tensor(np.transpose(a.values, axes))
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        a._accumulate(np.transpose(g, inv))

    return _record(out, (a,), backward)


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.values.reshape(shape))

    def backward(g):
        a._accumulate(g.reshape(a.values.shape))

    return _record(out, (a,), backward)


def flip(a, axis):
    a = _as_tensor(a)
    out = Tensor(np.flip(a.values, axis=axis).copy())

    def backward(g):
        a._accumulate(np.flip(g, axis=axis))

    return _record(out, (a,), backward)


def softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_v = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(out_v)

    def backward(g):
        dot = (g * out_v).sum(axis=axis, keepdims=True)
        a._accumulate(out_v * (g - dot))

    return _record(out, (a,), backward)


def binary_cross_entropy(pred, target):
    """Elementwise BCE against a constant target (no gradient to target)."""
    pred = _as_tensor(pred)
    t = target.values if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    p = np.clip(pred.values, _BCE_EPS, 1.0 - _BCE_EPS)
    out = Tensor(-(t * np.log(p) + (1.0 - t) * np.log1p(-p)))

    def backward(g):
        pred._accumulate(g * (p - t) / (p * (1.0 - p)))

    return _record(out, (pred,), backward)


def conv1d_dilated_causal(x, f, dilation=1):
    """Dilated causal 1-D convolution.

    ``x`` is (batch, in_channels, length), ``f`` is (out_channels,
    in_channels, k). Output position s reads x at s, s-d, ..., s-d(k-1);
    indices before the sequence start contribute zero (left padding), so the
    output has the same length as the input.
    """
    x, f = _as_tensor(x), _as_tensor(f)
    _require_shapes("conv1d_dilated_causal", x.values.ndim == 3 and f.values.ndim == 3,
                    x.values.shape, f.values.shape)
    batch, c_in, length = x.values.shape
    c_out, c_in_f, k = f.values.shape
    _require_shapes("conv1d_dilated_causal", c_in == c_in_f, x.values.shape, f.values.shape)
    d = int(dilation)
    if k < 1 or d < 1:
        raise ValueError(f"conv1d_dilated_causal: need k >= 1 and dilation >= 1, got k={k} d={d}")

    pad = d * (k - 1)
    xp = np.zeros((batch, c_in, length + pad))
    xp[:, :, pad:] = x.values

    out_v = np.zeros((batch, c_out, length))
    for i in range(k):
        off = d * (k - 1 - i)
        # (c_out, c_in) @ (batch, c_in, length) -> (batch, c_out, length)
        out_v += np.matmul(f.values[:, :, i], xp[:, :, off:off + length])
    out = Tensor(out_v)

    def backward(g):
        gx = np.zeros_like(xp)
        gf = np.zeros_like(f.values)
        for i in range(k):
            off = d * (k - 1 - i)
            gf[:, :, i] = np.tensordot(g, xp[:, :, off:off + length], axes=([0, 2], [0, 2]))
            gx[:, :, off:off + length] += np.matmul(f.values[:, :, i].T, g)
        x._accumulate(gx[:, :, pad:])
        f._accumulate(gf)

    return _record(out, (x, f), backward)


def backward(loss):
    """Run reverse-mode accumulation from a scalar loss tensor."""
    if loss.values.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.values.shape}")
    if not np.isfinite(loss.values).all():
        raise FloatingPointError("backward: loss is not finite")

    # Collect the reachable recorded subgraph, then replay closures in
    # reverse recording order (valid because _seq grows monotonically and
    # every op's inputs precede it).
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or t._backward is None:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)

    loss._accumulate(np.ones_like(loss.values))
    for t in nodes:
        t._backward(t.grad)


class Adam:
    """Adam optimizer over a list of leaf tensors."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1c
            v_hat = self.v[i] / b2c
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def params_to_doc(params):
    """{name -> Tensor} as a JSON-ready dict; float repr round-trips bit-exactly."""
    return {
        name: {"shape": list(p.values.shape), "values": [float(v) for v in p.values.ravel()]}
        for name, p in params.items()
    }


def params_from_doc(doc):
    return {
        name: Tensor(np.array(entry["values"], dtype=np.float64).reshape(entry["shape"]),
                     requires_grad=True)
        for name, entry in doc.items()
    }


def save_checkpoint(params, path):
    """Write {name -> {shape, values}} as UTF-8 JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_doc(params), fh, sort_keys=True)


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint; returns {name: Tensor}."""
    with open(path, encoding="utf-8") as fh:
        return params_from_doc(json.load(fh))


def uniform_init(rng, shape, fan_in):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)

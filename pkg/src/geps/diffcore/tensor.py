"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` records the operation that produced it; :func:`value_and_grad`
walks the recorded graph backwards.  Every primitive in this module also
accepts plain ndarrays and then returns a plain ndarray, so model and physics
code written against these functions runs at numpy speed when no gradient is
requested.

Numpy functions applied directly to a Tensor raise
:class:`UnsupportedPrimitiveError` instead of silently dropping the graph.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from geps.diffcore import kernels


class UnsupportedPrimitiveError(TypeError):
    """An operation without a registered derivative touched a Tensor."""


class NonScalarLossError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "_parents", "_backward", "requires_grad")
    __array_priority__ = 1000.0

    def __init__(self, data, parents: tuple = (), backward: Callable | None = None,
                 requires_grad: bool = False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def __len__(self):
        return len(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self) -> np.ndarray:
        return self.data

    def __float__(self):
        if self.requires_grad:
            raise UnsupportedPrimitiveError(
                "float() on a Tensor that requires grad would cut the graph; use .item()")
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # numpy interop: route the arithmetic ufuncs, reject everything else
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        fn = _UFUNCS.get(ufunc)
        if method != "__call__" or fn is None or kwargs:
            raise UnsupportedPrimitiveError(
                f"numpy.{ufunc.__name__} is not a differentiable primitive; "
                "use the geps.diffcore.tensor functions")
        return fn(*inputs)

    def __array_function__(self, func, types, args, kwargs):
        raise UnsupportedPrimitiveError(
            f"numpy.{func.__name__} is not a differentiable primitive; "
            "use the geps.diffcore.tensor functions")

    def __array__(self, dtype=None, copy=None):
        raise UnsupportedPrimitiveError("implicit conversion of a Tensor to ndarray")

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        if isinstance(p, int) and p >= 1:
            out = self
            for _ in range(p - 1):
                out = mul(out, self)
            return out
        raise UnsupportedPrimitiveError(f"power {p!r} is not supported")

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _d(x):
    return x.data if isinstance(x, Tensor) else x


def _needs(x) -> bool:
    return isinstance(x, Tensor) and x.requires_grad


def _any_tensor(*xs) -> bool:
    for x in xs:
        if isinstance(x, Tensor):
            return True
    return False


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _result(out, parents, backward):
    if any(_needs(p) for p in parents):
        return Tensor(out, parents, backward, True)
    return Tensor(out)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def value(x) -> np.ndarray:
    """Underlying array of a Tensor (or the array itself)."""
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# elementwise arithmetic --------------------------------------------------

def add(a, b):
    if not _any_tensor(a, b):
        return np.add(a, b)
    ad, bd = _d(a), _d(b)
    sa, sb = np.shape(ad), np.shape(bd)

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)
    return _result(ad + bd, (a, b), bw)


def sub(a, b):
    if not _any_tensor(a, b):
        return np.subtract(a, b)
    ad, bd = _d(a), _d(b)
    sa, sb = np.shape(ad), np.shape(bd)

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)
    return _result(ad - bd, (a, b), bw)


def mul(a, b):
    if not _any_tensor(a, b):
        return np.multiply(a, b)
    ad, bd = _d(a), _d(b)
    ra, rb = _needs(a), _needs(b)

    def bw(g):
        return (_unbroadcast(g * bd, np.shape(ad)) if ra else None,
                _unbroadcast(g * ad, np.shape(bd)) if rb else None)
    return _result(ad * bd, (a, b), bw)


diag_scale = mul


def div(a, b):
    if not _any_tensor(a, b):
        return np.divide(a, b)
    ad, bd = _d(a), _d(b)
    ra, rb = _needs(a), _needs(b)
    out = ad / bd

    def bw(g):
        return (_unbroadcast(g / bd, np.shape(ad)) if ra else None,
                _unbroadcast(-g * out / bd, np.shape(bd)) if rb else None)
    return _result(out, (a, b), bw)


def neg(a):
    if not isinstance(a, Tensor):
        return np.negative(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def square(a):
    if not isinstance(a, Tensor):
        return np.square(a)
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def sigmoid(a):
    if not isinstance(a, Tensor):
        return expit(a)
    s = expit(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def swish(a):
    """x * sigmoid(x)."""
    if not isinstance(a, Tensor):
        return a * expit(a)
    x = a.data
    s = expit(x)
    return _result(x * s, (a,), lambda g: (g * (s + x * s * (1.0 - s)),))


def tanh(a):
    if not isinstance(a, Tensor):
        return np.tanh(a)
    t = np.tanh(a.data)
    return _result(t, (a,), lambda g: (g * (1.0 - t * t),))


def sin(a):
    if not isinstance(a, Tensor):
        return np.sin(a)
    x = a.data
    return _result(np.sin(x), (a,), lambda g: (g * np.cos(x),))


def cos(a):
    if not isinstance(a, Tensor):
        return np.cos(a)
    x = a.data
    return _result(np.cos(x), (a,), lambda g: (-g * np.sin(x),))


def exp(a):
    if not isinstance(a, Tensor):
        return np.exp(a)
    e = np.exp(a.data)
    return _result(e, (a,), lambda g: (g * e,))


# linear algebra ------------------------------------------------------------

def matmul(a, b):
    if not _any_tensor(a, b):
        return np.matmul(a, b)
    ad, bd = _d(a), _d(b)
    ra, rb = _needs(a), _needs(b)

    def bw(g):
        ga = gb = None
        if ra:
            if bd.ndim == 1:
                ga = _unbroadcast(g[..., None] * bd, ad.shape)
            elif ad.ndim == 1:
                ga = _unbroadcast((bd @ g[..., None])[..., 0], ad.shape)
            else:
                ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if rb:
            if ad.ndim == 1 and bd.ndim == 2:
                gb = np.outer(ad, g)
            elif bd.ndim == 1:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1)
            elif bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb
    return _result(ad @ bd, (a, b), bw)


# reductions ----------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    if not isinstance(a, Tensor):
        return np.sum(a, axis=axis, keepdims=keepdims)
    x = a.data
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)
    return _result(np.sum(x, axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims=False):
    x = _d(a)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        count = int(np.prod([x.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def sqnorm(a):
    """Sum of squares."""
    if not isinstance(a, Tensor):
        return np.sum(np.square(a))
    x = a.data
    return _result(np.sum(x * x), (a,), lambda g: (2.0 * g * x,))


# shape manipulation ------------------------------------------------------

def reshape(a, shape):
    if not isinstance(a, Tensor):
        return np.reshape(a, shape)
    orig = a.data.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a, axes=None):
    if not isinstance(a, Tensor):
        return np.transpose(a, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(i is None or i is Ellipsis or isinstance(i, (int, np.integer, slice))
               for i in items)


def getitem(a, idx):
    if not isinstance(a, Tensor):
        return a[idx]
    x = a.data
    basic = _is_basic_index(idx)

    def bw(g):
        z = np.zeros_like(x)
        if basic:
            z[idx] = g
        else:
            np.add.at(z, idx, g)
        return (z,)
    return _result(x[idx], (a,), bw)


def take(a, indices, axis: int = 0):
    """Gather along ``axis`` (duplicates allowed)."""
    indices = np.asarray(indices, dtype=np.intp)
    if not isinstance(a, Tensor):
        return np.take(a, indices, axis=axis)
    x = a.data

    def bw(g):
        z = np.zeros_like(x)
        gm = np.moveaxis(g, axis, 0)
        zm = np.moveaxis(z, axis, 0)
        np.add.at(zm, indices, gm)
        return (z,)
    return _result(np.take(x, indices, axis=axis), (a,), bw)


def concat(items: Sequence, axis: int = 0):
    if not _any_tensor(*items):
        return np.concatenate(items, axis=axis)
    datas = [_d(t) for t in items]
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))
    return _result(np.concatenate(datas, axis=axis), tuple(items), bw)


def stack(items: Sequence, axis: int = 0):
    if not _any_tensor(*items):
        return np.stack(items, axis=axis)
    datas = [_d(t) for t in items]
    out = np.stack(datas, axis=axis)
    ax = axis if axis >= 0 else out.ndim + axis

    def bw(g):
        return tuple(g[(slice(None),) * ax + (i,)] for i in range(len(datas)))
    return _result(out, tuple(items), bw)


def roll(a, shift, axis):
    if not isinstance(a, Tensor):
        return np.roll(a, shift, axis)
    neg_shift = tuple(-s for s in shift) if isinstance(shift, tuple) else -shift
    return _result(np.roll(a.data, shift, axis), (a,),
                   lambda g: (np.roll(g, neg_shift, axis),))


# circular convolution patches --------------------------------------------

def unfold1d(a, k: int):
    """(n, L, C) -> (n, L, k*C) circular patches, tap-major columns."""
    if not isinstance(a, Tensor):
        return kernels.unfold1d(a, k)
    C = a.data.shape[2]
    return _result(kernels.unfold1d(a.data, k), (a,),
                   lambda g: (kernels.fold1d(g, k, C),))


def unfold2d(a, k: int):
    """(n, H, W, C) -> (n, H*W, k*k*C) circular patches."""
    if not isinstance(a, Tensor):
        return kernels.unfold2d(a, k)
    _, H, W, C = a.data.shape
    return _result(kernels.unfold2d(a.data, k), (a,),
                   lambda g: (kernels.fold2d(g, k, H, W, C),))


_UFUNCS = {
    np.add: add, np.subtract: sub, np.multiply: mul, np.true_divide: div,
    np.negative: neg, np.matmul: matmul, np.square: square, np.sin: sin,
    np.cos: cos, np.exp: exp, np.tanh: tanh,
}


# gradient driver -----------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen = {id(root)}
    stack_ = [(root, iter(root._parents))]
    while stack_:
        node, it = stack_[-1]
        for p in it:
            if isinstance(p, Tensor) and p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack_.append((p, iter(p._parents)))
                break
        else:
            stack_.pop()
            order.append(node)
    return order


def backprop(root: Tensor) -> dict[int, np.ndarray]:
    """Gradients of ``root`` keyed by ``id`` of each leaf Tensor."""
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(_toposort(root)):
        if node._backward is None:
            continue
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not _needs(p):
                continue
            k = id(p)
            grads[k] = grads[k] + gp if k in grads else gp
    return grads


def value_and_grad(loss_fn: Callable[[Mapping], object], params) -> tuple[float, dict]:
    """Evaluate ``loss_fn`` on ``params`` and differentiate it.

    ``loss_fn`` receives a mapping name -> Tensor for trainable entries and
    name -> ndarray for frozen ones.  Returns the loss value and a gradient map
    holding every trainable name.
    """
    leaves: dict[str, Tensor] = {}
    inputs: dict[str, object] = {}
    frozen = params.frozen
    for name, arr in params.items():
        if name in frozen:
            inputs[name] = arr
        else:
            t = Tensor(arr, requires_grad=True)
            leaves[name] = t
            inputs[name] = t
    loss = loss_fn(inputs)
    data = _d(loss)
    if np.size(data) != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {np.shape(data)}")
    grads = backprop(loss) if _needs(loss) else {}
    out = {}
    for name, t in leaves.items():
        g = grads.get(id(t))
        out[name] = (np.zeros_like(t.data) if g is None
                     else np.array(g, dtype=np.float64).reshape(t.data.shape))
    return float(np.reshape(data, -1)[0]), out


def grad(loss_fn: Callable[[Mapping], object], params) -> dict:
    return value_and_grad(loss_fn, params)[1]

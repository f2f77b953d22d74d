"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Every op in this module records its
inputs and a backward rule on the output when any input requires a gradient;
:func:`backward` walks that record in reverse topological order.

Training runs in float32, gradient checks in float64: ops keep the dtype of
their inputs and never upcast.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, NumericError

_grad_enabled = True
CHECK_FINITE = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.size == 0:
            raise DimensionError(f"tensor shape {arr.shape} has a zero dimension")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self):
        backward(self)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


# -- graph machinery ---------------------------------------------------


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(x, dtype=dtype)
    if t.data.dtype.kind != "f":
        t.data = t.data.astype(np.float64)
    t.requires_grad = False
    t.grad = None
    t.name = None
    t._parents = ()
    t._backward = None
    t._op = "const"
    return t


def _result(data, parents, backward_fn, op):
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def graph_order(root):
    """Return the nodes reachable from ``root`` in topological order.

    Inputs precede the ops that consume them; each node appears once.
    """
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tensor that requires grad")
    order = graph_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                g = np.asarray(g, dtype=node.data.dtype).reshape(node.shape)
                node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise arithmetic --------------------------------------------


def add(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), bw, "mul")


# -- linear algebra ----------------------------------------------------


def matmul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad @ bd, (a, b), bw, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``weight`` of shape (out, in)."""
    x = _as_tensor(x, weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    wd = weight.data
    y = x2 @ wd.T
    if bias is not None:
        y += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, wd.shape[0])
        gx = (g2 @ wd).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0) if bias.requires_grad else None

    return _result(y.reshape(lead + (wd.shape[0],)), parents, bw, "linear")


# -- reductions and shape ops ------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape
    count = math.prod(shape[a] for a in axes)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).astype(x.dtype),)

    out = np.asarray(x.data.mean(axis=axes, keepdims=keepdims), dtype=x.dtype)
    return _result(out, (x,), bw, "mean")


def reshape(x, shape):
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {old} into {tuple(shape)}") from None

    def bw(g):
        return (g.reshape(old),)

    return _result(out, (x,), bw, "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort([a % x.ndim for a in axes]))

    def bw(g):
        return (np.transpose(g, inverse),)

    return _result(np.transpose(x.data, axes), (x,), bw, "transpose")


def getitem(x, idx):
    shape = x.shape
    try:
        out = x.data[idx]
    except IndexError as exc:
        raise DimensionError(f"index {idx!r} invalid for shape {shape}: {exc}") from None
    out = np.array(out, dtype=x.dtype)

    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(out, (x,), bw, "getitem")


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def concat(tensors, axis=-1):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise DimensionError(f"concat: shapes {ref.shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concat")


def stack(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("stack needs at least one tensor")
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise DimensionError(f"stack: shapes {tensors[0].shape} and {t.shape} differ")
    ax = axis % (tensors[0].ndim + 1)

    def bw(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _result(np.stack([t.data for t in tensors], axis=ax), tuple(tensors), bw, "stack")


# -- nonlinearities ----------------------------------------------------


def _rows(a):
    return np.ascontiguousarray(a).reshape(-1, a.shape[-1])


def softmax(x):
    """Softmax over the last axis."""
    shape = x.shape
    y = kernels.softmax_fwd(_rows(x.data))

    def bw(g):
        return (kernels.softmax_bwd(y, _rows(g.astype(y.dtype, copy=False))).reshape(shape),)

    return _result(y.reshape(shape), (x,), bw, "softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(f"layer_norm: input {x.shape} with scale {gamma.shape} / shift {beta.shape}")
    shape = x.shape
    y, xhat, rstd = kernels.layer_norm_fwd(_rows(x.data), gamma.data, beta.data, eps)

    def bw(g):
        gx, gg, gb = kernels.layer_norm_bwd(_rows(g.astype(xhat.dtype, copy=False)), xhat, rstd, gamma.data)
        return gx.reshape(shape), gg, gb

    return _result(y.reshape(shape), (x, gamma, beta), bw, "layer_norm")


def gelu(x):
    """GELU, tanh approximation."""
    xd = x.data

    def bw(g):
        return (kernels.gelu_bwd(xd, g),)

    return _result(kernels.gelu_fwd(xd), (x,), bw, "gelu")


def sigmoid(x):
    xd = x.data
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)

    def bw(g):
        return (g * y * (1.0 - y),)

    return _result(y, (x,), bw, "sigmoid")


def dropout(x, rate, train, rng=None):
    """Inverted dropout. Identity when ``train`` is false or ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an explicit rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / np.asarray(1.0 - rate, dtype=x.dtype)

    def bw(g):
        return (g * mask,)

    return _result(x.data * mask, (x,), bw, "dropout")


def scaled_dot_attention(q, k, v, return_weights=False):
    """softmax(q kᵀ / √d) v over the last two axes.

    With ``return_weights`` the attention matrix is returned alongside the
    output as a plain array (rows sum to one).
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} do not conform")
    qd, kd, vd = q.data, k.data, v.data
    scale = np.asarray(1.0 / math.sqrt(qd.shape[-1]), dtype=qd.dtype)
    scores = (qd @ np.swapaxes(kd, -1, -2)) * scale
    s_shape = scores.shape
    attn = kernels.softmax_fwd(_rows(scores)).reshape(s_shape)
    out = attn @ vd

    def bw(g):
        gv = np.swapaxes(attn, -1, -2) @ g if v.requires_grad else None
        gattn = g @ np.swapaxes(vd, -1, -2)
        gs = kernels.softmax_bwd(_rows(attn), _rows(gattn)).reshape(s_shape) * scale
        gq = gs @ kd if q.requires_grad else None
        gk = np.swapaxes(gs, -1, -2) @ qd if k.requires_grad else None
        return gq, gk, gv

    result = _result(out, (q, k, v), bw, "attention")
    if return_weights:
        return result, attn
    return result


# -- losses ------------------------------------------------------------


def bce_with_logits(logits, labels):
    """Mean of max(z,0) − z·y + log(1+exp(−|z|)) over the batch."""
    z = logits.data
    y = np.asarray(labels, dtype=z.dtype).reshape(z.shape)
    losses = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def bw(g):
        e = np.exp(-np.abs(z))
        p = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return ((p - y) * (g / n)).astype(z.dtype),

    return _result(np.asarray(losses.mean(), dtype=z.dtype), (logits,), bw, "bce")


def mse_loss(pred, target):
    p = pred.data
    t = np.asarray(target, dtype=p.dtype).reshape(p.shape)
    diff = p - t
    n = p.size

    def bw(g):
        return ((2.0 / n) * diff * g).astype(p.dtype),

    return _result(np.asarray(np.mean(diff * diff), dtype=p.dtype), (pred,), bw, "mse")

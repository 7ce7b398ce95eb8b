"""Dense float64 tensors with a define-by-run reverse-mode tape.

Operations only record themselves while a :class:`Tape` is active and at
least one input requires a gradient, so inference runs at plain numpy speed.

>>> x = Tensor(np.ones((1, 1, 4, 4)), requires_grad=True)
>>> with Tape() as tape:
...     y = sum_all(conv2d(x, Tensor(np.ones((1, 1, 3, 3))), padding=1))
>>> tape.backward(y)
>>> x.grad[0, 0, 1, 1]
9.0
"""

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64

_local = threading.local()


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible."""


class Tensor:
    """A float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar used by tests and small graphs
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __mul__(self, other):
        return mul(self, as_tensor(other))


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=DTYPE)


@dataclass
class Node:
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence]


@dataclass
class Tape:
    """Ordered record of operations for one forward pass.

    Use as a context manager; ops executed inside append nodes in execution
    order, which is a valid topological order.
    """

    nodes: list = field(default_factory=list)

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def backward(self, output, seed=None):
        """Propagate gradients from ``output`` to every recorded input.

        Gradients accumulate into ``Tensor.grad`` of leaves and intermediates.
        """
        g = np.ones_like(output.data) if seed is None else np.asarray(seed, DTYPE)
        output.grad = g if output.grad is None else output.grad + g
        for node in reversed(self.nodes):
            gout = node.output.grad
            if gout is None:
                continue
            for inp, gin in zip(node.inputs, node.backward(gout)):
                if gin is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                inp.grad = gin if inp.grad is None else inp.grad + gin


def active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def no_grad_tape():
    """Context that suspends recording inside an active tape."""
    return _Suspend()


class _Suspend:
    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(None)

    def __exit__(self, *exc):
        _local.stack.pop()
        return False


def _record(inputs, out_data, backward):
    """Wrap ``out_data`` and put a node on the active tape if needed."""
    tape = active_tape()
    needs = tape is not None and any(
        isinstance(t, Tensor) and t.requires_grad for t in inputs
    )
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.nodes.append(Node(tuple(inputs), out, backward))
    return out


# --------------------------------------------------------------------------
# elementwise and reductions


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record((a, b), out, backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record((a, b), out, backward)


def sum_all(x):
    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record((x,), np.asarray(x.data.sum()), backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def relu(x):
    mask = x.data > 0
    return _record((x,), x.data * mask, lambda g: (g * mask,))


def flatten(x):
    shape = x.shape
    return _record((x,), x.data.reshape(shape[0], -1), lambda g: (g.reshape(shape),))


# --------------------------------------------------------------------------
# padding


def _pad_index(n, before, after, mode):
    """Source index for every padded position; -1 marks zero fill."""
    if mode == "reflect":
        if max(before, after) >= n:
            raise ShapeError(f"reflect padding {max(before, after)} needs size > pad, got {n}")
        return np.pad(np.arange(n), (before, after), mode="reflect")
    if mode == "zero":
        return np.concatenate([np.full(before, -1), np.arange(n), np.full(after, -1)])
    raise ValueError(f"unknown padding mode {mode!r}")


def _pad_matrix(n, before, after, mode):
    idx = _pad_index(n, before, after, mode)
    mat = np.zeros((len(idx), n), dtype=DTYPE)
    valid = idx >= 0
    mat[np.nonzero(valid)[0], idx[valid]] = 1.0
    return mat


def unpad2d(g, top, bottom, left, right, mode):
    """Adjoint of padding the last two axes: fold padded borders back in."""
    H = g.shape[-2] - top - bottom
    W = g.shape[-1] - left - right
    if mode == "zero":
        return g[..., top:top + H, left:left + W].copy()
    rows_idx = _pad_index(H, top, bottom, mode)
    cols_idx = _pad_index(W, left, right, mode)
    rows = g[..., top:top + H, :].copy()
    for i in list(range(top)) + list(range(top + H, top + H + bottom)):
        rows[..., rows_idx[i], :] += g[..., i, :]
    out = rows[..., left:left + W].copy()
    for j in list(range(left)) + list(range(left + W, left + W + right)):
        out[..., cols_idx[j]] += rows[..., j]
    return out


def pad2d(x, pad, mode="zero"):
    """Pad the last two axes. ``pad`` is an int or (top, bottom, left, right)."""
    if isinstance(pad, int):
        pad = (pad, pad, pad, pad)
    top, bottom, left, right = pad
    if not any(pad):
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    if mode == "reflect":
        H, W = x.shape[-2:]
        _pad_index(H, top, bottom, mode)
        _pad_index(W, left, right, mode)
        out = np.pad(x.data, widths, mode="reflect")
    elif mode == "zero":
        out = np.pad(x.data, widths)
    else:
        raise ValueError(f"unknown padding mode {mode!r}")
    H, W = x.shape[-2:]

    def backward(g):
        return (unpad2d(g, top, bottom, left, right, mode),)

    return _record((x,), out, backward)


# --------------------------------------------------------------------------
# convolution


def _windows(x, k, stride):
    """(N, C, Ho, Wo, k, k) view of stride-spaced k×k windows."""
    w = sliding_window_view(x, (k, k), axis=(2, 3))
    return w[:, :, ::stride, ::stride]


def _tap(xp, p, q, ho, wo, stride):
    return xp[:, :, p:p + (ho - 1) * stride + 1:stride, q:q + (wo - 1) * stride + 1:stride]


def im2col(xp, k, stride):
    """(N, C*k*k, Ho*Wo) patch matrix of a padded NCHW array."""
    N, C, Hp, Wp = xp.shape
    ho, wo = (Hp - k) // stride + 1, (Wp - k) // stride + 1
    cols = np.empty((N, C, k, k, ho, wo), dtype=DTYPE)
    for p in range(k):
        for q in range(k):
            cols[:, :, p, q] = _tap(xp, p, q, ho, wo, stride)
    return cols.reshape(N, C * k * k, ho * wo), ho, wo


def col2im(cols, shape, k, stride, ho, wo):
    """Adjoint of :func:`im2col`: scatter-add patches back into ``shape``."""
    N, C = shape[:2]
    cols = cols.reshape(N, C, k, k, ho, wo)
    out = np.zeros(shape, dtype=DTYPE)
    for p in range(k):
        for q in range(k):
            _tap(out, p, q, ho, wo, stride)[...] += cols[:, :, p, q]
    return out


def conv2d(x, weight, bias=None, stride=1, padding=0, pad_mode="zero"):
    """2-D cross-correlation over NCHW input with OCkk weights.

    Output size is floor((H + 2p - k) / stride) + 1 per spatial axis.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv2d input has {x.shape[1]} channels but weight expects {weight.shape[1]}"
        )
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    O, C, k, k2 = weight.shape
    if k != k2:
        raise ShapeError("only square kernels are supported")
    xp = pad2d(x, padding, pad_mode) if padding else x
    Hp, Wp = xp.shape[2:]
    if Hp < k or Wp < k:
        raise ShapeError(f"kernel {k} larger than padded input {Hp}x{Wp}")
    N = xp.shape[0]
    cols, ho, wo = im2col(xp.data, k, stride)
    wmat = weight.data.reshape(O, C * k * k)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1)
    out = out.reshape(N, O, ho, wo)

    def backward(g):
        g2 = g.reshape(N, O, ho * wo)
        gw = gb = gx = None
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if xp.requires_grad:
            gx = col2im(np.matmul(wmat.T, g2), xp.shape, k, stride, ho, wo)
        return gx, gw, gb

    inputs = (xp, weight) if bias is None else (xp, weight, bias)
    return _record(inputs, out, backward)


def dense(x, weight, bias=None):
    """Affine map ``x @ weight + bias`` with ``weight`` of shape (in, out)."""
    if x.ndim != 2:
        x = flatten(x)
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense input has {x.shape[1]} features, weight expects {weight.shape[0]}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data.T
        gw = x.data.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(inputs, out, backward)


# --------------------------------------------------------------------------
# pooling and sampling


def _same_pad(k):
    before = (k - 1) // 2
    return before, k - 1 - before


def _argmax_pool(x, k, stride, pad_mode, same):
    if same:
        b, a = _same_pad(k)
        xp = pad2d(x, (b, a, b, a), pad_mode)
    else:
        xp = x
    Hp, Wp = xp.shape[2:]
    if Hp < k or Wp < k:
        raise ShapeError(f"pool window {k} larger than padded input {Hp}x{Wp}")
    ho, wo = (Hp - k) // stride + 1, (Wp - k) // stride + 1
    src = xp.data
    out = _tap(src, 0, 0, ho, wo, stride).copy()
    arg = np.zeros(out.shape, dtype=np.int8 if k * k < 128 else np.int32)
    # taps visited in row-major window order; strict '>' keeps the first maximum
    for t in range(1, k * k):
        cand = _tap(src, t // k, t % k, ho, wo, stride)
        better = cand > out
        np.copyto(out, cand, where=better)
        np.copyto(arg, t, where=better)

    def backward(g):
        gx = np.zeros(xp.shape, dtype=DTYPE)
        for t in range(k * k):
            _tap(gx, t // k, t % k, ho, wo, stride)[...] += g * (arg == t)
        return (gx,)

    return _record((xp,), out, backward)


def max_pool(x, k, stride):
    """Ordinary (valid) max pooling."""
    return _argmax_pool(x, k, stride, "zero", same=False)


def dense_max(x, k, pad_mode="reflect"):
    """Stride-1 max pooling with same-size output.

    Even windows pad one extra row/column after the image. Gradients go to
    the first maximal element of each window.
    """
    H, W = x.shape[2:]
    if k > H or k > W:
        raise ShapeError(f"dense_max window {k} larger than input {H}x{W}")
    return _argmax_pool(x, k, 1, pad_mode, same=True)


def avg_pool(x, k, stride):
    xd = x.data
    win = _windows(xd, k, stride)
    out = win.mean(axis=(-1, -2))
    Ho, Wo = out.shape[2:]

    def backward(g):
        gx = np.zeros(x.shape, dtype=DTYPE)
        share = g / (k * k)
        for p in range(k):
            for q in range(k):
                gx[:, :, p:p + (Ho - 1) * stride + 1:stride, q:q + (Wo - 1) * stride + 1:stride] += share
        return (gx,)

    return _record((x,), out, backward)


def subsample_size(n, stride, k=1):
    """Number of kept positions: floor((n - k) / stride) + 1."""
    return (n - k) // stride + 1


def subsample(x, stride, k=1):
    """Keep rows/cols 0, s, 2s, ... (as many as a k-window at stride s yields)."""
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    H, W = x.shape[2:]
    ho, wo = subsample_size(H, stride, k), subsample_size(W, stride, k)
    if ho < 1 or wo < 1:
        raise ShapeError(f"window {k} larger than input {H}x{W}")
    rows = slice(0, (ho - 1) * stride + 1, stride)
    cols = slice(0, (wo - 1) * stride + 1, stride)
    out = np.ascontiguousarray(x.data[:, :, rows, cols])

    def backward(g):
        gx = np.zeros(x.shape, dtype=DTYPE)
        gx[:, :, rows, cols] = g
        return (gx,)

    return _record((x,), out, backward)


# --------------------------------------------------------------------------
# loss


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_xent(logits, labels, reduction="mean"):
    """Cross-entropy of ``logits`` (N, classes) against integer ``labels``.

    ``reduction="none"`` returns per-sample losses (no gradient recorded).
    """
    labels = np.asarray(labels, dtype=np.int64)
    N, K = logits.shape
    if labels.shape != (N,):
        raise ShapeError(f"expected {N} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K}), got range [{labels.min()}, {labels.max()}]")
    logp = log_softmax(logits.data)
    per_sample = -logp[np.arange(N), labels]
    if reduction == "none":
        return per_sample
    loss = per_sample.mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(N), labels] -= 1.0
        return (g * p / N,)

    return _record((logits,), np.asarray(loss), backward)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """SGD hyperparameters and one velocity buffer per parameter name."""

    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


def sgd_step(params, grads, state, decay=None):
    """One momentum step, in place on the arrays in ``params``.

    velocity <- momentum * velocity - lr * (grad + wd * param)
    param    <- param + velocity

    ``decay`` optionally names the parameters that receive weight decay;
    by default all of them do.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        wd = state.weight_decay if decay is None or name in decay else 0.0
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(p)
        if v.shape != p.shape:
            raise ShapeError(f"velocity for {name} has shape {v.shape}, param {p.shape}")
        v *= state.momentum
        v -= state.learning_rate * (g + wd * p)
        p += v
    return params

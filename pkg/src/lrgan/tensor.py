"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays in one of two global precision modes: float32 for
training and inference, float64 for verification harnesses. The graph is a
define-by-run tape: every operation that involves a gradient-requiring input
records its parents and a backward closure. Every kernel checks that its
output is finite and raises NumericsError naming the operation, so GAN
instabilities surface at the op that produced them.
"""

from __future__ import annotations

import contextlib

import numpy as np


class NumericsError(ArithmeticError):
    """An operation produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32


def set_precision(mode):
    """Set the global precision mode ('float32' or 'float64')."""
    global _default_dtype
    if mode not in _DTYPES:
        raise ValueError(f"unknown precision {mode!r}; expected 'float32' or 'float64'")
    _default_dtype = _DTYPES[mode]


def get_precision():
    return "float64" if _default_dtype is np.float64 else "float32"


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(mode):
    """Temporarily switch the global precision mode."""
    old = get_precision()
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(old)


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{op} produced non-finite values")


class Tensor:
    """N-dimensional array with an optional gradient and tape linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=_default_dtype)
        _check_finite(self.data, "tensor")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- introspection -----------------------------------------------------

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
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- ergonomics --------------------------------------------------------

    def detach(self):
        return detach(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else (axes or None))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return tpow(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


def _scalar_err(t):
    raise ShapeError(f"item() requires a single-element tensor, got shape {t.shape}")


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data, parents, backward, op):
    """Build an op-result tensor and record it on the tape when needed."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise -------------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(out, (a, b), backward, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result(out, (a, b), backward, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _result(out, (a, b), backward, "mul")


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _result(out, (a, b), backward, "div")


def neg(a):
    a = _as_tensor(a)

    def backward(g):
        return (-g,)

    return _result(-a.data, (a,), backward, "neg")


def tpow(a, p):
    a = _as_tensor(a)
    p = float(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data**p

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g * p * a.data ** (p - 1.0),)

    return _result(out, (a,), backward, "pow")


def texp(a):
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _result(out, (a,), backward, "exp")


def tlog(a):
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _result(out, (a,), backward, "log")


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _result(out, (a,), backward, "tanh")


def _sigmoid_raw(x):
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    s[~pos] = e / (1.0 + e)
    return s


def sigmoid(a):
    a = _as_tensor(a)
    out = _sigmoid_raw(a.data)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _result(out, (a,), backward, "sigmoid")


def log_sigmoid(a):
    """Numerically stable log(sigmoid(x)); never hits log(0)."""
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = -np.log1p(np.exp(-x[pos]))
    out[~pos] = x[~pos] - np.log1p(np.exp(x[~pos]))
    grad_factor = _sigmoid_raw(-x)

    def backward(g):
        return (g * grad_factor,)

    return _result(out, (a,), backward, "log_sigmoid")


def leaky_relu(a, slope=0.2):
    a = _as_tensor(a)
    factor = np.where(a.data > 0, a.data.dtype.type(1.0), a.data.dtype.type(slope))
    out = a.data * factor

    def backward(g):
        return (g * factor,)

    return _result(out, (a,), backward, "leaky_relu")


# -- shape manipulation ------------------------------------------------------


def detach(a):
    a = _as_tensor(a)
    out = Tensor.__new__(Tensor)
    out.data = a.data
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out._op = "detach"
    return out


def reshape(a, shape):
    a = _as_tensor(a)
    orig = a.data.shape
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(orig),)

    return _result(out, (a,), backward, "reshape")


def transpose(a, axes=None):
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    axes = tuple(axes)
    inv = np.argsort(axes)

    def backward(g):
        return (g.transpose(inv),)

    return _result(a.data.transpose(axes), (a,), backward, "transpose")


def broadcast_to(a, shape):
    a = _as_tensor(a)
    out = np.broadcast_to(a.data, shape)

    def backward(g):
        return (_unbroadcast(g, a.data.shape),)

    return _result(out, (a,), backward, "broadcast_to")


def concat(tensors, axis=0):
    ts = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(ts)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return _result(out, tuple(ts), backward, "concat")


def narrow(a, axis, start, length):
    """Slice `length` entries along `axis` starting at `start`."""
    a = _as_tensor(a)
    if start < 0 or start + length > a.data.shape[axis]:
        raise ShapeError(
            f"narrow out of range: axis {axis} start {start} length {length} on shape {a.data.shape}"
        )
    slicer = [slice(None)] * a.data.ndim
    slicer[axis] = slice(start, start + length)
    slicer = tuple(slicer)

    def backward(g):
        full = np.zeros_like(a.data)
        full[slicer] = g
        return (full,)

    return _result(a.data[slicer], (a,), backward, "narrow")


# -- reductions --------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(gk, a.data.shape),)

    return _result(out, (a,), backward, "sum")


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.data.ndim)
    count = int(np.prod([a.data.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims) if axes else a.data.copy()

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(gk, a.data.shape) / count,)

    return _result(out, (a,), backward, "mean")


# -- linear algebra ----------------------------------------------------------


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _result(out, (a, b), backward, "matmul")


def bmm(a, b):
    """Batched matrix multiply: (B,m,k) x (B,k,n) -> (B,m,n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError(f"bmm expects 3-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[1]:
        raise ShapeError(f"bmm shapes disagree: {a.data.shape} x {b.data.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        return np.matmul(g, b.data.transpose(0, 2, 1)), np.matmul(a.data.transpose(0, 2, 1), g)

    return _result(out, (a, b), backward, "bmm")


def softmax_lastdim(a):
    """Softmax over the last dimension, shifted by the row max for stability."""
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (a,), backward, "softmax_lastdim")


# -- convolution and resampling ----------------------------------------------


def conv2d_raw(x, kernel, stride=1, pad=0):
    """Plain-numpy cross-correlation used by conv2d and frozen embedders.

    Patches are taken through a strided window view and copied once into a
    (C*k*k, N*H'*W') matrix, so the whole convolution is a single 2-D GEMM;
    batched-broadcast matmul is drastically slower here.
    """
    n, c, h, w = x.shape
    co = kernel.shape[0]
    k = kernel.shape[2]
    if pad:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad : pad + h, pad : pad + w] = x
    else:
        xp = x
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    sn, sc, sh, sw = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, (n, c, oh, ow, k, k), (sn, sc, sh * stride, sw * stride, sh, sw)
    )
    patches = windows.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * oh * ow)
    out2 = kernel.reshape(co, -1) @ patches
    out = out2.reshape(co, n, oh * ow).transpose(1, 0, 2).reshape(n, co, oh, ow)
    return out, patches


def _conv_check(xshape, kshape, stride, padding):
    if len(xshape) != 4 or len(kshape) != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {xshape} and {kshape}")
    n, c, h, w = xshape
    co, ci, kh, kw = kshape
    if kh != kw:
        raise ShapeError(f"conv2d kernels must be square, got {kshape}")
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input {xshape} vs kernel {kshape}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    pad = kh // 2 if padding is None else int(padding)
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(f"kernel {kshape} larger than padded input {xshape} (pad {pad})")
    if (h + 2 * pad - kh) % stride or (w + 2 * pad - kw) % stride:
        raise ShapeError(
            f"conv2d output size is not integral: input {xshape}, kernel {kshape}, "
            f"stride {stride}, pad {pad}"
        )
    return pad


def conv2d(x, kernel, stride=1, padding=None):
    """Cross-correlation (no kernel flip). padding=None means k//2 ('same' for stride 1)."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    pad = _conv_check(x.data.shape, kernel.data.shape, stride, padding)
    n, c, h, w = x.data.shape
    co = kernel.data.shape[0]
    k = kernel.data.shape[2]
    out, patches = conv2d_raw(x.data, kernel.data, stride, pad)
    need_x = x.requires_grad
    need_k = kernel.requires_grad

    def backward(g):
        gk = None
        if need_k:
            g2 = g.transpose(1, 0, 2, 3).reshape(co, -1)
            gk = (g2 @ patches.T).reshape(kernel.data.shape)
        gx = None
        if need_x:
            # dx is a full cross-correlation of the stride-dilated output grad
            # with the spatially flipped, channel-transposed kernel.
            oh, ow = g.shape[2], g.shape[3]
            if stride > 1:
                gd = np.zeros((n, co, (oh - 1) * stride + 1, (ow - 1) * stride + 1), dtype=g.dtype)
                gd[:, :, ::stride, ::stride] = g
            else:
                gd = g
            kt = kernel.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
            gx, _ = conv2d_raw(np.ascontiguousarray(gd), np.ascontiguousarray(kt), 1, k - 1 - pad)
        return gx, gk

    return _result(out, (x, kernel), backward, "conv2d")


def upsample_nearest(a):
    """Replicate every pixel into a 2x2 block."""
    a = _as_tensor(a)
    if a.data.ndim != 4:
        raise ShapeError(f"upsample_nearest expects NCHW input, got {a.data.shape}")
    out = a.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = a.data.shape

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _result(out, (a,), backward, "upsample_nearest")


def avg_pool2d(a):
    """2x2 average pooling with stride 2."""
    a = _as_tensor(a)
    n, c, h, w = a.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2d needs even spatial dims, got {a.data.shape}")
    out = a.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        return (g.repeat(2, axis=2).repeat(2, axis=3) / 4.0,)

    return _result(out, (a,), backward, "avg_pool2d")


# -- reverse pass ------------------------------------------------------------


def backward(root):
    """Accumulate d(root)/d(leaf) into .grad of every requires_grad leaf.

    Repeated calls without clearing leaf grads accumulate. Each graph node is
    visited exactly once per call.
    """
    if not isinstance(root, Tensor):
        raise TypeError("backward expects a Tensor root")
    if root.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        return

    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad = node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            _check_finite(pg, f"{node._op} backward")
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

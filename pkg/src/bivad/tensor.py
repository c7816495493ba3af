"""Reverse-mode autodiff on numpy arrays, sized for small conv models.

A :class:`Tensor` wraps an ndarray plus an optional tape record (parent
tensors and a backward closure).  Calling :func:`backward` on a scalar
result walks the tape once and accumulates gradients into every reachable
tensor with ``requires_grad``; a consumed graph refuses a second walk.

Convolutions run as channels-last im2col + GEMM, which is the only route
that keeps large models inside the time budget on BLAS-backed numpy.  The
public layout convention stays row-major (N, C, H, W).

Float32 is the working precision; every op preserves the input dtype, so
building a model from float64 leaves gives full 64-bit verification runs.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import InvalidArgumentError, NumericError, StateError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable taping inside the block; forward math is unchanged."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_retired")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._retired = False

    # -- introspection -------------------------------------------------

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

    def item(self) -> float:
        if self.data.size != 1:
            _bad("item() needs a single-element tensor, got shape %s" % (self.shape,))
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------

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
        return mul(self, -1.0)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or not isinstance(shape[0], (tuple, list)) else shape[0])

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """Leaf tensor tracked by optimizers; carries a dotted path name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name


def _bad(msg: str):
    raise InvalidArgumentError(msg)


def _wrap(x, like: np.dtype) -> "Tensor":
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like))


def _make(data: np.ndarray, parents: Sequence[Tensor], bwd) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = bwd
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape).astype(t.data.dtype, copy=False)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(root: Tensor):
    """Accumulate d(root)/d(leaf) into every requires_grad leaf.

    The walked graph is retired afterwards; touching it again raises
    StateError instead of silently producing stale gradients.
    """
    if root.data.size != 1:
        _bad("backward root must be a scalar, got shape %s" % (root.shape,))
    if root._retired:
        raise StateError("backward already ran on this graph")
    order: list[Tensor] = []
    seen = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                if p._retired:
                    raise StateError("graph shares tensors with an already-consumed graph")
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is None:
            continue
        node._backward(node.grad)
        node._retired = True
        if node is not root:
            node.grad = None
    root.grad = None


# -- elementwise arithmetic --------------------------------------------


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _wrap(a, _dtype_of(b))
    b = _wrap(b, a.data.dtype)

    def bwd(go):
        _accum(a, go)
        _accum(b, go)

    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _wrap(a, _dtype_of(b))
    b = _wrap(b, a.data.dtype)

    def bwd(go):
        _accum(a, go)
        _accum(b, -go)

    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _wrap(a, _dtype_of(b))
    b = _wrap(b, a.data.dtype)

    def bwd(go):
        _accum(a, go * b.data)
        _accum(b, go * a.data)

    return _make(a.data * b.data, (a, b), bwd)


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _wrap(a, _dtype_of(b))
    b = _wrap(b, a.data.dtype)

    def bwd(go):
        _accum(a, go / b.data)
        _accum(b, -go * a.data / (b.data * b.data))

    return _make(a.data / b.data, (a, b), bwd)


def _dtype_of(x) -> np.dtype:
    return x.data.dtype if isinstance(x, Tensor) else DEFAULT_DTYPE


# -- activations and pointwise functions -------------------------------


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data >= 0

    def bwd(go):
        _accum(x, go * np.where(pos, 1.0, slope).astype(x.data.dtype))

    return _make(np.where(pos, x.data, x.data * slope), (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bwd(go):
        _accum(x, go * (1.0 - y * y))

    return _make(y, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so neither exp() overflows
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)

    def bwd(go):
        _accum(x, go * y * (1.0 - y))

    return _make(y, (x,), bwd)


def abs_(x: Tensor) -> Tensor:
    sign = np.sign(x.data)

    def bwd(go):
        _accum(x, go * sign)

    return _make(np.abs(x.data), (x,), bwd)


def sqrt(x: Tensor) -> Tensor:
    """Elementwise square root; negatives clamp to zero.

    The gradient denominator is floored so a flat (zero-variance) input
    cannot inject inf into the tape.
    """
    y = np.sqrt(np.maximum(x.data, 0.0))

    def bwd(go):
        _accum(x, go * 0.5 / np.maximum(y, 1e-12))

    return _make(y, (x,), bwd)


# -- reductions ---------------------------------------------------------


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bwd(go):
        g = go
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.data.shape))

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for a in ax:
            count *= x.data.shape[a]

    def bwd(go):
        g = go
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.data.shape) / count)

    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), bwd)


# -- shape surgery -------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bwd(go):
        _accum(x, go.reshape(x.data.shape))

    return _make(x.data.reshape(shape), (x,), bwd)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(go):
        _accum(x, go.transpose(inv))

    return _make(x.data.transpose(axes), (x,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        _bad("concat of zero tensors")
    sizes = [t.data.shape[axis] for t in tensors]
    offs = np.cumsum([0] + sizes)

    def bwd(go):
        for t, a, b in zip(tensors, offs[:-1], offs[1:]):
            idx = [slice(None)] * go.ndim
            idx[axis] = slice(a, b)
            _accum(t, go[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bwd(go):
        g = np.zeros_like(x.data)
        g[idx] = go
        _accum(x, g)

    return _make(x.data[idx], (x,), bwd)


def index_select(x: Tensor, axis: int, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        _bad("index_select wants a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[axis]):
        _bad(f"index out of range for axis of {x.data.shape[axis]}")

    def bwd(go):
        g = np.zeros_like(x.data)
        np.add.at(g, (slice(None),) * axis + (idx,), go)
        _accum(x, g)

    return _make(np.take(x.data, idx, axis=axis), (x,), bwd)


def split(x: Tensor, chunks: int, axis: int = 0) -> list[Tensor]:
    n = x.data.shape[axis]
    if n % chunks:
        _bad(f"cannot split axis of {n} into {chunks} equal chunks")
    step = n // chunks
    return [narrow(x, axis, i * step, step) for i in range(chunks)]


# -- matrix products ------------------------------------------------------


def bmm(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """Batched matmul on stacked matrices: (L,M,K) @ (L,K,N) -> (L,M,N)."""
    bd = b.data.swapaxes(-1, -2) if transpose_b else b.data

    def bwd(go):
        _accum(a, go @ bd.swapaxes(-1, -2))
        gb = a.data.swapaxes(-1, -2) @ go
        _accum(b, gb.swapaxes(-1, -2) if transpose_b else gb)

    return _make(a.data @ bd, (a, b), bwd)


def softmax_last(x: Tensor, bias: np.ndarray | None = None) -> Tensor:
    """Row softmax over the trailing axis, with an optional additive bias.

    The bias is a plain array (commonly 0 / -1e9 masking); entries pushed
    to -1e9 underflow to an exact zero weight after the max shift.
    """
    z = x.data + bias if bias is not None else x.data
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(go):
        _accum(x, y * (go - (go * y).sum(axis=-1, keepdims=True)))

    return _make(y, (x,), bwd)


def softmax_vec(scores) -> np.ndarray:
    """Numerically stable softmax of a 1-D score vector (float64)."""
    v = np.asarray(scores, dtype=np.float64)
    if v.ndim != 1:
        _bad("softmax_vec expects a 1-D vector, got shape %s" % (v.shape,))
    if v.size == 0:
        _bad("softmax_vec of an empty vector")
    e = np.exp(v - v.max())
    return e / e.sum()


# -- convolution ----------------------------------------------------------


def _check_finite(name: str, arr: np.ndarray):
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} contains non-finite values")


def _same_pads(size: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def _conv_geometry(h: int, w: int, kh: int, kw: int, stride: int, padding: str):
    if padding == "same":
        oh, pt, pb = _same_pads(h, kh, stride)
        ow, pl, pr = _same_pads(w, kw, stride)
    elif padding == "valid":
        if h < kh or w < kw:
            _bad(f"valid conv needs input >= kernel, got {(h, w)} vs {(kh, kw)}")
        oh = (h - kh) // stride + 1
        ow = (w - kw) // stride + 1
        pt = pb = pl = pr = 0
    else:
        _bad(f"unknown padding mode {padding!r}")
    return oh, ow, pt, pb, pl, pr


def _im2col(xcl: np.ndarray, kh: int, kw: int, stride: int, pads) -> np.ndarray:
    """(N,H,W,C) -> (N*oh*ow, kh*kw*C) patch matrix."""
    pt, pb, pl, pr = pads
    if pt or pb or pl or pr:
        xcl = np.pad(xcl, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    n, hp, wp, c = xcl.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    s0, s1, s2, s3 = xcl.strides
    cols = as_strided(xcl, (n, oh, ow, kh, kw, c),
                      (s0, s1 * stride, s2 * stride, s1, s2, s3))
    return cols.reshape(n * oh * ow, kh * kw * c)


def _col2im(gcols: np.ndarray, n: int, hw, kh: int, kw: int, stride: int, pads,
            oh: int, ow: int, c: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back to (N,H,W,C)."""
    h, w = hw
    pt, pb, pl, pr = pads
    out = np.zeros((n, h + pt + pb, w + pl + pr, c), dtype=gcols.dtype)
    g6 = gcols.reshape(n, oh, ow, kh, kw, c)
    for dy in range(kh):
        ys = slice(dy, dy + (oh - 1) * stride + 1, stride)
        for dx in range(kw):
            xs = slice(dx, dx + (ow - 1) * stride + 1, stride)
            out[:, ys, xs, :] += g6[:, :, :, dy, dx, :]
    return out[:, pt:pt + h, pl:pl + w, :]


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.data.ndim == 3:
        return reshape(x, (1,) + x.data.shape), True
    if x.data.ndim == 4:
        return x, False
    _bad("conv input must be (C,H,W) or (N,C,H,W), got shape %s" % (x.shape,))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2-D correlation with zero 'same' padding (TF-style asymmetric) or 'valid'.

    x: (N,C,H,W) or (C,H,W); w: (C_out, C_in, kh, kw); b: (C_out,) or None.
    """
    x, squeezed = _as_batched(x)
    if w.data.ndim != 4:
        _bad("conv kernel must be 4-D, got shape %s" % (w.shape,))
    n, c, h, wd = x.data.shape
    co, ci, kh, kw = w.data.shape
    if ci != c:
        _bad(f"kernel expects {ci} input channels, tensor has {c}")
    if not isinstance(stride, int) or stride < 1:
        _bad(f"stride must be a positive int, got {stride!r}")
    _check_finite("conv2d input", x.data)
    _check_finite("conv2d kernel", w.data)
    oh, ow, pt, pb, pl, pr = _conv_geometry(h, wd, kh, kw, stride, padding)
    pads = (pt, pb, pl, pr)

    cols = _im2col(x.data.transpose(0, 2, 3, 1), kh, kw, stride, pads)
    wrs = w.data.transpose(2, 3, 1, 0).reshape(kh * kw * c, co)
    out = cols @ wrs
    out = np.ascontiguousarray(out.reshape(n, oh, ow, co).transpose(0, 3, 1, 2))
    if b is not None:
        if b.data.shape != (co,):
            _bad(f"bias must have shape ({co},), got {b.shape}")
        out += b.data.reshape(1, co, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def bwd(go):
        gocl = np.ascontiguousarray(go.transpose(0, 2, 3, 1)).reshape(n * oh * ow, co)
        if w.requires_grad:
            gw = (cols.T @ gocl).reshape(kh, kw, c, co).transpose(3, 2, 0, 1)
            _accum(w, gw)
        if x.requires_grad:
            gcols = gocl @ wrs.T
            gx = _col2im(gcols, n, (h, wd), kh, kw, stride, pads, oh, ow, c)
            _accum(x, gx.transpose(0, 3, 1, 2))
        if b is not None:
            _accum(b, gocl.sum(axis=0))

    res = _make(out, parents, bwd)
    return reshape(res, res.data.shape[1:]) if squeezed else res


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
                     out_hw: tuple[int, int] | None = None,
                     padding: str = "same") -> Tensor:
    """Exact adjoint of :func:`conv2d` with the same kernel and geometry.

    x: (N, C_out, H', W') -> (N, C_in, H, W).  Without ``out_hw`` the output
    spatial size defaults to stride * input size ('same' geometry), so a
    stride-2 call doubles the extent.
    """
    x, squeezed = _as_batched(x)
    if w.data.ndim != 4:
        _bad("conv kernel must be 4-D, got shape %s" % (w.shape,))
    n, cin_x, hh, ww = x.data.shape
    co, ci, kh, kw = w.data.shape
    if cin_x != co:
        _bad(f"transposed kernel expects {co} input channels, tensor has {cin_x}")
    if not isinstance(stride, int) or stride < 1:
        _bad(f"stride must be a positive int, got {stride!r}")
    _check_finite("conv_transpose2d input", x.data)
    _check_finite("conv_transpose2d kernel", w.data)
    if out_hw is None:
        if padding == "same":
            h, wd = hh * stride, ww * stride
        else:
            h, wd = (hh - 1) * stride + kh, (ww - 1) * stride + kw
    else:
        h, wd = out_hw
    oh, ow, pt, pb, pl, pr = _conv_geometry(h, wd, kh, kw, stride, padding)
    if (oh, ow) != (hh, ww):
        _bad(f"out_hw {(h, wd)} is inconsistent with input {(hh, ww)} at stride {stride}")
    pads = (pt, pb, pl, pr)

    wrs = w.data.transpose(2, 3, 1, 0).reshape(kh * kw * ci, co)
    xflat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(n * hh * ww, co)
    gcols = xflat @ wrs.T
    out = _col2im(gcols, n, (h, wd), kh, kw, stride, pads, oh, ow, ci)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if b is not None:
        if b.data.shape != (ci,):
            _bad(f"bias must have shape ({ci},), got {b.shape}")
        out += b.data.reshape(1, ci, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def bwd(go):
        gocols = _im2col(go.transpose(0, 2, 3, 1), kh, kw, stride, pads)
        if x.requires_grad:
            gx = (gocols @ wrs).reshape(n, hh, ww, co).transpose(0, 3, 1, 2)
            _accum(x, gx)
        if w.requires_grad:
            gw = (gocols.T @ xflat).reshape(kh, kw, ci, co).transpose(3, 2, 0, 1)
            _accum(w, gw)
        if b is not None:
            _accum(b, go.sum(axis=(0, 2, 3)))

    res = _make(out, parents, bwd)
    return reshape(res, res.data.shape[1:]) if squeezed else res


# -- parameters and optimizer ----------------------------------------------


def init_uniform(param: Parameter, fan_in: int, rng: np.random.Generator):
    bound = float(np.sqrt(1.0 / fan_in))
    param.data[...] = rng.uniform(-bound, bound, size=param.data.shape).astype(param.data.dtype)


class Adam:
    """Adam with bias correction; clears grads after each step."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        if not self.params:
            _bad("optimizer needs at least one parameter")
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p in self.params:
            if p.grad is None:
                name = getattr(p, "name", "<unnamed>")
                raise StateError(f"parameter {name} has no gradient; run backward first")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad = None

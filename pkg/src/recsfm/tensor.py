"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray together with an optional gradient buffer and a
backward closure.  Ops build a DAG; ``backward`` walks it once in reverse
topological order.  The engine is CPU-only and deterministic: identical op
sequences produce bit-identical values and gradients.

Shape discipline is strict on purpose.  Elementwise ops broadcast only when
ranks are equal (dims equal or 1) or differ by exactly one leading axis;
anything else raises ``DimensionError`` instead of silently promoting.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (ConfigError, DimensionError, DomainError, GraphError,
                     NumericsError)

__all__ = [
    "Tensor",
    "Parameter",
    "no_grad",
    "tensor",
    "constant",
    "zeros",
    "concat",
    "matmul",
    "exp",
    "log",
    "sqrt",
    "sin",
    "cos",
    "absolute",
    "sigmoid",
    "tanh",
    "relu",
    "softplus",
    "minimum",
    "maximum",
    "elementwise",
    "reduce",
    "global_avg_pool",
    "conv2d",
    "bilinear_sample",
    "bilinear_upsample",
    "backward",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure forward math)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype.kind in "iub":
        arr = arr.astype(np.float32)
    elif arr.dtype.kind != "f":
        raise DimensionError(f"tensors hold float arrays, got dtype {arr.dtype}")
    return arr


def _ensure_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericsError(f"non-finite values produced by '{op}'")


def _check_broadcast(sa: tuple, sb: tuple, op: str) -> None:
    if not sa or not sb:  # scalars combine with anything
        return
    if abs(len(sa) - len(sb)) > 1:
        raise DimensionError(f"'{op}': ranks {len(sa)} and {len(sb)} differ by more than one")
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    for da, db in zip(reversed(small), reversed(big)):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"'{op}': shapes {sa} and {sb} are not broadcastable")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node in the autodiff graph: ndarray value plus backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
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
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # -- graph construction ---------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, op: str, parents: Sequence["Tensor"],
              backward_fn: Callable[[np.ndarray], None]) -> "Tensor":
        _ensure_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward_fn = None
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- arithmetic ------------------------------------------------------

    @staticmethod
    def _lift(other, like: "Tensor | None" = None) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        dtype = like.data.dtype if like is not None else np.float32
        return Tensor(np.asarray(other, dtype=dtype))

    def __add__(self, other):
        other = Tensor._lift(other, self)
        _check_broadcast(self.shape, other.shape, "add")
        a, b = self, other

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._make(a.data + b.data, "add", (a, b), bwd)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor._make(-a.data, "neg", (a,), bwd)

    def __sub__(self, other):
        return self + (-Tensor._lift(other, self))

    def __rsub__(self, other):
        return Tensor._lift(other, self) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other, self)
        _check_broadcast(self.shape, other.shape, "mul")
        a, b = self, other

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(a.data * b.data, "mul", (a, b), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other, self)
        _check_broadcast(self.shape, other.shape, "div")
        a, b = self, other

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        with np.errstate(divide="ignore", invalid="ignore"):
            out_data = a.data / b.data  # the finite check in _make reports zeros
        return Tensor._make(out_data, "div", (a, b), bwd)

    def __rtruediv__(self, other):
        return Tensor._lift(other, self) / self

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise DimensionError("pow exponent must be a python scalar")
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * p * a.data ** (p - 1))

        return Tensor._make(a.data ** p, "pow", (a,), bwd)

    # -- shape ops --------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out_data = a.data.reshape(shape)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g.reshape(a.shape))

        return Tensor._make(out_data, "reshape", (a,), bwd)

    def __getitem__(self, key) -> "Tensor":
        a = self
        out_data = a.data[key]
        if np.isscalar(out_data) or out_data.ndim == 0:
            out_data = np.asarray(out_data)

        def bwd(g):
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                buf[key] += g
                a._accumulate(buf)

        return Tensor._make(np.ascontiguousarray(out_data), "slice", (a,), bwd)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)
        if np.isscalar(out_data):
            out_data = np.asarray(out_data)

        def bwd(g):
            if not a.requires_grad:
                return
            gg = g
            if not keepdims and axis is not None:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.shape).copy() if gg.shape != a.shape
                          else gg)

        return Tensor._make(np.asarray(out_data), "sum", (a,), bwd)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod(
            [self.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))


class Parameter:
    """A named trainable tensor; the registry key for checkpoints and Adam."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.tensor = Tensor(np.asarray(value), requires_grad=True)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


# -- constructors ---------------------------------------------------------

def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


# -- unary math -----------------------------------------------------------

def _unary(a: Tensor, op: str, fwd, dfn) -> Tensor:
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out_data = fwd(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * dfn(a.data, out_data))

    return Tensor._make(out_data, op, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    return _unary(a, "exp", np.exp, lambda x, y: y)


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise DomainError("log requires strictly positive inputs")
    return _unary(a, "log", np.log, lambda x, y: 1.0 / x)


def sqrt(a: Tensor) -> Tensor:
    if (a.data < 0).any():
        raise DomainError("sqrt requires non-negative inputs")
    return _unary(a, "sqrt", np.sqrt, lambda x, y: 0.5 / np.maximum(y, np.finfo(y.dtype).tiny))


def sin(a: Tensor) -> Tensor:
    return _unary(a, "sin", np.sin, lambda x, y: np.cos(x))


def cos(a: Tensor) -> Tensor:
    return _unary(a, "cos", np.cos, lambda x, y: -np.sin(x))


def absolute(a: Tensor) -> Tensor:
    return _unary(a, "abs", np.abs, lambda x, y: np.sign(x))


def sigmoid(a: Tensor) -> Tensor:
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    return _unary(a, "sigmoid", fwd, lambda x, y: y * (1.0 - y))


def tanh(a: Tensor) -> Tensor:
    return _unary(a, "tanh", np.tanh, lambda x, y: 1.0 - y * y)


def relu(a: Tensor) -> Tensor:
    return _unary(a, "relu", lambda x: np.maximum(x, 0.0),
                  lambda x, y: (x > 0).astype(x.dtype))


def softplus(a: Tensor) -> Tensor:
    def fwd(x):
        return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def dfn(x, y):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    return _unary(a, "softplus", fwd, dfn)


# -- binary selection -------------------------------------------------------

def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; on ties the gradient flows to the first argument."""
    if not isinstance(a, Tensor):
        a = Tensor._lift(a, b if isinstance(b, Tensor) else None)
    b = Tensor._lift(b, a)
    _check_broadcast(a.shape, b.shape, "minimum")
    take_a = a.data <= b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return Tensor._make(np.minimum(a.data, b.data), "minimum", (a, b), bwd)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; on ties the gradient flows to the first argument."""
    if not isinstance(a, Tensor):
        a = Tensor._lift(a, b if isinstance(b, Tensor) else None)
    b = Tensor._lift(b, a)
    _check_broadcast(a.shape, b.shape, "maximum")
    take_a = a.data >= b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return Tensor._make(np.maximum(a.data, b.data), "maximum", (a, b), bwd)


_ELEMENTWISE = {"add": lambda a, b: a + b, "sub": lambda a, b: a - b,
                "mul": lambda a, b: a * b, "div": lambda a, b: a / b,
                "min": minimum, "max": maximum}


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    """Dispatch a named binary elementwise op ('add', 'sub', 'mul', 'div', 'min', 'max')."""
    if op not in _ELEMENTWISE:
        raise DimensionError(f"unknown elementwise op {op!r}")
    return _ELEMENTWISE[op](a, b)


def reduce(a: Tensor, op: str, axis=None, keepdims: bool = False) -> Tensor:
    """Dispatch a named reduction ('sum' or 'mean') over the given axes."""
    if op == "sum":
        return a.sum(axis=axis, keepdims=keepdims)
    if op == "mean":
        return a.mean(axis=axis, keepdims=keepdims)
    raise DimensionError(f"unknown reduction {op!r}")


# -- structure ops -----------------------------------------------------------

def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [Tensor._lift(p) for p in parts]
    if not parts:
        raise DimensionError("concat needs at least one tensor")
    rank = parts[0].ndim
    for p in parts[1:]:
        if p.ndim != rank:
            raise DimensionError("concat requires equal ranks")
        for ax in range(rank):
            if ax != axis % rank and p.shape[ax] != parts[0].shape[ax]:
                raise DimensionError(
                    f"concat mismatch on axis {ax}: {p.shape} vs {parts[0].shape}")
    ax = axis % rank
    sizes = [p.shape[ax] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * rank
                idx[ax] = slice(int(lo), int(hi))
                p._accumulate(g[tuple(idx)])

    return Tensor._make(np.concatenate([p.data for p in parts], axis=ax),
                        "concat", parts, bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = Tensor._lift(a), Tensor._lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._make(a.data @ b.data, "matmul", (a, b), bwd)


def global_avg_pool(a: Tensor) -> Tensor:
    """(C, H, W) -> (C,) spatial mean; keeps parameter counts resolution-free."""
    if a.ndim != 3:
        raise DimensionError(f"global_avg_pool expects (C,H,W), got {a.shape}")
    c, h, w = a.shape
    scale = 1.0 / float(h * w)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g[:, None, None] * scale, a.shape).copy())

    return Tensor._make(a.data.mean(axis=(1, 2)), "global_avg_pool", (a,), bwd)


# -- convolution --------------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int,
            oh: int, ow: int) -> np.ndarray:
    """(C, Hp, Wp) -> (C*kh*kw, oh*ow) patch matrix via a strided view."""
    c = x.shape[0]
    s0, s1, s2 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(c, kh, kw, oh, ow),
        strides=(s0, s1, s2, s1 * sh, s2 * sw), writeable=False)
    return view.reshape(c * kh * kw, oh * ow)


def _col2im(cols: np.ndarray, c: int, hp: int, wp: int, kh: int, kw: int,
            sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    """Adjoint of `_im2col`: scatter-add patch columns back to (C, Hp, Wp)."""
    x = np.zeros((c, hp, wp), dtype=cols.dtype)
    patches = cols.reshape(c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            x[:, i:i + sh * oh:sh, j:j + sw * ow:sw] += patches[:, i, j]
    return x


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=1, padding=0, pad_mode: str = "zeros") -> Tensor:
    """2-D convolution (cross-correlation) on (C,H,W) with (O,C,kh,kw) weights.

    pad_mode "zeros" surrounds the input with zeros; "edge" replicates the
    border pixels instead, which avoids stamping an absolute-position
    signature onto maps that are later compared across warped views.
    """
    if x.ndim != 3:
        raise DimensionError(f"conv2d input must be (C,H,W), got {x.shape}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d weight must be (O,C,kh,kw), got {weight.shape}")
    if pad_mode not in ("zeros", "edge"):
        raise ConfigError(f"conv2d pad_mode must be 'zeros' or 'edge', got {pad_mode!r}")
    o, cin, kh, kw = weight.shape
    if x.shape[0] != cin:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape[0]} vs weight {cin}")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv2d bias must be ({o},), got {bias.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    _, h, w = x.shape
    hp, wp = h + 2 * ph, w + 2 * pw
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise DimensionError(
            f"conv2d output would be empty: input {x.shape}, kernel {kh}x{kw}")

    if ph or pw:
        mode = {} if pad_mode == "zeros" else {"mode": "edge"}
        xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)), **mode)
    else:
        xp = x.data
    cols = np.ascontiguousarray(_im2col(xp, kh, kw, sh, sw, oh, ow))
    wmat = weight.data.reshape(o, cin * kh * kw)
    out = wmat @ cols
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(o, oh, ow)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        gmat = g.reshape(o, oh * ow)
        if weight.requires_grad:
            weight._accumulate((gmat @ cols.T).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(gmat.sum(axis=1))
        if x.requires_grad:
            gcols = wmat.T @ gmat
            gx = _col2im(gcols, cin, hp, wp, kh, kw, sh, sw, oh, ow)
            if ph or pw:
                if pad_mode == "edge":
                    # every padded cell replicated some edge pixel, so its
                    # gradient folds back onto that pixel; rows first, then
                    # columns, which routes the corners through both folds
                    if ph:
                        gx[:, ph] += gx[:, :ph].sum(axis=1)
                        gx[:, hp - ph - 1] += gx[:, hp - ph:].sum(axis=1)
                    gx = gx[:, ph:hp - ph]
                    if pw:
                        gx[:, :, pw] += gx[:, :, :pw].sum(axis=2)
                        gx[:, :, wp - pw - 1] += gx[:, :, wp - pw:].sum(axis=2)
                    gx = gx[:, :, pw:wp - pw]
                else:
                    gx = gx[:, ph:hp - ph, pw:wp - pw]
            x._accumulate(gx)

    return Tensor._make(out, "conv2d", parents, bwd)


# -- bilinear sampling ---------------------------------------------------------

def bilinear_sample(source: Tensor, coords: Tensor) -> tuple[Tensor, np.ndarray]:
    """Sample (C,H,W) at pixel coords (2,h,w): row 0 = x (column), row 1 = y.

    Out-of-range coords are clamped to the border; the returned float mask
    (1,h,w) is 1 exactly where the un-clamped coords fell inside the image.
    Differentiable in both the source map and the coordinates.
    """
    if source.ndim != 3:
        raise DimensionError(f"bilinear_sample source must be (C,H,W), got {source.shape}")
    if coords.ndim != 3 or coords.shape[0] != 2:
        raise DimensionError(f"bilinear_sample coords must be (2,h,w), got {coords.shape}")
    c, h, w = source.shape
    if h < 2 or w < 2:
        raise DimensionError("bilinear_sample needs a source of at least 2x2 pixels")
    _, oh, ow = coords.shape

    u = coords.data[0].reshape(-1)
    v = coords.data[1].reshape(-1)
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    valid = inside.reshape(1, oh, ow).astype(coords.data.dtype)

    ucl = np.clip(u, 0.0, w - 1.0)
    vcl = np.clip(v, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(ucl), w - 2).astype(np.int64)
    y0 = np.minimum(np.floor(vcl), h - 2).astype(np.int64)
    # subtracting int64 would promote float32 coords to float64 and the
    # widened dtype would then infect everything sampled downstream
    fx = (ucl - x0).astype(ucl.dtype)
    fy = (vcl - y0).astype(vcl.dtype)

    flat = source.data.reshape(c, h * w)
    i00 = y0 * w + x0
    i10 = i00 + 1
    i01 = i00 + w
    i11 = i01 + 1
    m00, m10 = flat[:, i00], flat[:, i10]
    m01, m11 = flat[:, i01], flat[:, i11]
    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    out = (w00 * m00 + w10 * m10 + w01 * m01 + w11 * m11).reshape(c, oh, ow)

    def bwd(g):
        gflat = g.reshape(c, oh * ow)
        if source.requires_grad:
            gsrc = np.zeros((c, h * w), dtype=source.data.dtype)
            idx = np.concatenate([i00, i10, i01, i11])
            wts = np.concatenate([w00, w10, w01, w11])
            for ch in range(c):
                contrib = np.concatenate([gflat[ch]] * 4) * wts
                gsrc[ch] = np.bincount(idx, weights=contrib, minlength=h * w)
            source._accumulate(gsrc.reshape(source.shape))
        if coords.requires_grad:
            du = ((1 - fy) * (m10 - m00) + fy * (m11 - m01))
            dv = ((1 - fx) * (m01 - m00) + fx * (m11 - m10))
            gu = (gflat * du).sum(axis=0) * inside
            gv = (gflat * dv).sum(axis=0) * inside
            coords._accumulate(
                np.stack([gu, gv]).reshape(2, oh, ow).astype(coords.data.dtype))

    return Tensor._make(out, "bilinear_sample", (source, coords), bwd), valid


def bilinear_upsample(source: Tensor, factor: int, out_hw: tuple[int, int] | None = None
                      ) -> Tensor:
    """Upsample (C,h,w) by `factor` with bilinear interpolation, border clamp.

    Destination pixel centers map to source via (dst + 0.5)/factor - 0.5.
    """
    _, h, w = source.shape
    oh, ow = out_hw if out_hw is not None else (h * factor, w * factor)
    ys = (np.arange(oh, dtype=source.data.dtype) + 0.5) / factor - 0.5
    xs = (np.arange(ow, dtype=source.data.dtype) + 0.5) / factor - 0.5
    grid = np.stack(np.meshgrid(xs, ys, indexing="xy"))
    out, _ = bilinear_sample(source, Tensor(grid))
    return out


# -- backward pass --------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        nid = id(node)
        if processed:
            state[nid] = 2
            order.append(node)
            continue
        mark = state.get(nid)
        if mark == 2:
            continue
        if mark == 1:
            raise GraphError("cycle detected in autodiff graph")
        state[nid] = 1
        stack.append((node, True))
        for parent in node._parents:
            if state.get(id(parent)) != 2:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into `.grad` of every reachable grad node."""
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not require grad; nothing to differentiate")
    order = _topo_order(loss)
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
            node.grad = None  # interior buffers are per-pass; leaves accumulate

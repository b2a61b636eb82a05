"""Dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays (float32 by default, float64 for
gradient checking). Every op records a node on an implicit tape; gradients
are obtained functionally via :func:`grad`, which never mutates the graph,
so backward can be replayed. All backward rules are themselves written in
terms of tape ops, which makes every op differentiable to arbitrary order
(needed to differentiate the discriminator gradient penalty w.r.t. weights).

Broadcasting is deliberately restricted: elementwise ops require exact shape
agreement, scalars go through the *_scalar variants, and the only structural
broadcast is the channel bias-add (plus the internal broadcast used by
reduction backward rules).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes do not conform for an op; names the offending op."""

    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


class SecondOrderError(RuntimeError):
    """An op on a create_graph backward path has no differentiable backward."""

    def __init__(self, op: str):
        super().__init__(f"{op}: backward pass is not differentiable (second-order unsupported)")
        self.op = op


_grad_enabled = True


class _set_grad:
    """Context manager that forces tape recording on or off."""

    def __init__(self, enabled: bool):
        self._enabled = enabled

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = self._enabled
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class no_grad(_set_grad):
    """Context manager that suspends tape recording."""

    def __init__(self):
        super().__init__(False)


class Tensor:
    """A dense n-d array, optionally attached to the differentiation tape."""

    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._op: str = "leaf"

    # -- basic introspection -------------------------------------------------

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
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _raise_nonscalar(self)

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag}, op={self._op})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        """Detached copy in the given float dtype (used by gradient checks)."""
        return Tensor(self.data.astype(dtype))

    def numpy(self) -> np.ndarray:
        return self.data

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add_scalar(self, other) if np.isscalar(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add_scalar(self, -other) if np.isscalar(other) else sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul_scalar(self, other) if np.isscalar(other) else mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if np.isscalar(other):
            return mul_scalar(self, 1.0 / other)
        return mul(self, pow_const(other, -1.0))

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


def _raise_nonscalar(t: Tensor):
    raise ShapeError("item", f"expected a single-element tensor, got shape {t.shape}")


def _result(data: np.ndarray, op: str, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
    return out


def _const(data: np.ndarray, like: Tensor) -> Tensor:
    return Tensor(np.asarray(data, dtype=like.data.dtype))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data))


def _check_same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(op, f"shape mismatch {a.shape} vs {b.shape}")


# -- elementwise arithmetic --------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _result(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return _result(a.data - b.data, "sub", (a, b), lambda g: (g, neg(g)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    return _result(a.data * b.data, "mul", (a, b), lambda g: (mul(g, b), mul(g, a)))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, "neg", (a,), lambda g: (neg(g),))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * a.data.dtype.type(c), "mul_scalar", (a,), lambda g: (mul_scalar(g, c),))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data + a.data.dtype.type(c), "add_scalar", (a,), lambda g: (g,))


def pow_const(a: Tensor, p: float) -> Tensor:
    p = float(p)

    def vjp(g):
        return (mul(g, mul_scalar(pow_const(a, p - 1.0), p)),)

    return _result(a.data ** a.data.dtype.type(p), "pow_const", (a,), vjp)


def square(a: Tensor) -> Tensor:
    return mul(a, a)


# -- elementwise nonlinearities ----------------------------------------------


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    out = _result(out_data, "exp", (a,), None)
    if out._parents:
        out._vjp = lambda g: (mul(g, out),)
    return out


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), "log", (a,), lambda g: (mul(g, pow_const(a, -1.0)),))


def sigmoid(a: Tensor) -> Tensor:
    # exp overflow at very negative x saturates to inf, giving the correct 0.
    with np.errstate(over="ignore"):
        out_data = 1.0 / (1.0 + np.exp(-a.data))
    out = _result(out_data.astype(a.data.dtype, copy=False), "sigmoid", (a,), None)
    if out._parents:
        out._vjp = lambda g: (mul(g, mul(out, add_scalar(neg(out), 1.0))),)
    return out


def tanh(a: Tensor) -> Tensor:
    out = _result(np.tanh(a.data), "tanh", (a,), None)
    if out._parents:
        out._vjp = lambda g: (mul(g, add_scalar(neg(mul(out, out)), 1.0)),)
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), evaluated stably; derivative is sigmoid(x)."""
    x = a.data
    out_data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return _result(out_data.astype(x.dtype), "softplus", (a,), lambda g: (mul(g, sigmoid(a)),))


def swish(a: Tensor) -> Tensor:
    """x * sigmoid(x) as an op composition (differentiable to any order)."""
    return mul(a, sigmoid(a))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)

    def vjp(g):
        return (mul(g, _const(mask, a)),)

    return _result(a.data * mask, "leaky_relu", (a,), vjp)


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data).astype(a.data.dtype)

    def vjp(g):
        return (mul(g, _const(sign, a)),)

    return _result(np.abs(a.data), "abs", (a,), vjp)


# -- shape ops -----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size and -1 not in shape:
        raise ShapeError("reshape", f"cannot view {a.shape} as {shape}")
    old = a.shape
    return _result(a.data.reshape(shape), "reshape", (a,), lambda g: (reshape(g, old),))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose", f"expected a matrix, got shape {a.shape}")
    return _result(np.ascontiguousarray(a.data.T), "transpose", (a,), lambda g: (transpose(g),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Expand size-1 axes of `a` to `shape` (same rank required)."""
    shape = tuple(int(s) for s in shape)
    if a.ndim != len(shape):
        raise ShapeError("broadcast_to", f"rank mismatch {a.shape} vs {shape}")
    axes = []
    for i, (da, ds) in enumerate(zip(a.shape, shape)):
        if da == ds:
            continue
        if da != 1:
            raise ShapeError("broadcast_to", f"cannot expand {a.shape} to {shape}")
        axes.append(i)
    axes = tuple(axes)

    def vjp(g):
        return (sum_(g, axis=axes, keepdims=True),)

    return _result(np.ascontiguousarray(np.broadcast_to(a.data, shape)), "broadcast_to", (a,), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    if not (0 <= start and start + length <= a.shape[axis]):
        raise ShapeError("narrow", f"slice [{start}:{start + length}] out of range for axis {axis} of {a.shape}")
    idx = tuple(slice(None) if i != axis else slice(start, start + length) for i in range(a.ndim))
    full = a.shape

    def vjp(g):
        return (_pad_slice(g, full, axis, start),)

    return _result(np.ascontiguousarray(a.data[idx]), "narrow", (a,), vjp)


def _pad_slice(g: Tensor, target_shape, axis: int, start: int) -> Tensor:
    length = g.shape[axis]

    def vjp(gg):
        return (narrow(gg, axis, start, length),)

    data = np.zeros(target_shape, dtype=g.data.dtype)
    idx = tuple(slice(None) if i != axis else slice(start, start + length) for i in range(len(target_shape)))
    data[idx] = g.data
    return _result(data, "pad_slice", (g,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat", "need at least one tensor")
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(base) or any(s != b for i, (s, b) in enumerate(zip(t.shape, base)) if i != axis):
            raise ShapeError("concat", f"incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def vjp(g):
        return tuple(narrow(g, axis, int(offsets[i]), sizes[i]) for i in range(len(sizes)))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), "concat", tuple(tensors), vjp)


def _bcast_axes(op: str, x: Tensor, m: Tensor) -> tuple[int, ...]:
    if x.ndim != m.ndim:
        raise ShapeError(op, f"rank mismatch {x.shape} vs {m.shape}")
    axes = []
    for i, (dx, dm) in enumerate(zip(x.shape, m.shape)):
        if dm == dx:
            continue
        if dm != 1:
            raise ShapeError(op, f"cannot broadcast {m.shape} against {x.shape}")
        axes.append(i)
    return tuple(axes)


def _sub_bcast(x: Tensor, m: Tensor) -> Tensor:
    """x - m with m broadcast over its singleton axes (internal to composites)."""
    axes = _bcast_axes("sub_bcast", x, m)

    def vjp(g):
        return (g, neg(sum_(g, axis=axes, keepdims=True)) if axes else neg(g))

    return _result(x.data - m.data, "sub_bcast", (x, m), vjp)


def _mul_bcast(x: Tensor, m: Tensor) -> Tensor:
    """x * m with m broadcast over its singleton axes (internal to composites)."""
    axes = _bcast_axes("mul_bcast", x, m)

    def vjp(g):
        gm = sum_(mul(g, x), axis=axes, keepdims=True) if axes else mul(g, x)
        return (_mul_bcast(g, m), gm)

    return _result(x.data * m.data, "mul_bcast", (x, m), vjp)


# -- reductions ----------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        axes = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axes = (axis,)
    else:
        axes = tuple(axis)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))
    full = a.shape

    def vjp(g):
        gk = g if keepdims or a.ndim == 0 else reshape(g, kept)
        return (broadcast_to(gk, full),)

    return _result(a.data.sum(axis=axes if axes else None, keepdims=keepdims), "sum", (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return mul_scalar(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def l1_norm(a: Tensor) -> Tensor:
    return sum_(abs_(a))


def sq_l2_norm(a: Tensor) -> Tensor:
    return sum_(mul(a, a))


# -- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"cannot multiply {a.shape} @ {b.shape}")

    def vjp(g):
        return (matmul(g, transpose(b)), matmul(transpose(a), g))

    return _result(a.data @ b.data, "matmul", (a, b), vjp)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-C vector along axis 1 of x (the one supported broadcast)."""
    if b.ndim != 1 or x.ndim < 2 or x.shape[1] != b.shape[0]:
        raise ShapeError("bias_add", f"bias {b.shape} does not match axis 1 of {x.shape}")
    bshape = (1, b.shape[0]) + (1,) * (x.ndim - 2)
    other_axes = tuple(i for i in range(x.ndim) if i != 1)

    def vjp(g):
        gb = sum_(g, axis=other_axes) if other_axes else g
        return (g, gb)

    return _result(x.data + b.data.reshape(bshape), "bias_add", (x, b), vjp)


# -- convolution -------------------------------------------------------------
#
# conv2d / conv2d_x_grad / conv2d_w_grad form a closed trio: each one's
# backward is expressed through the other two, so the whole family is
# differentiable to arbitrary order. Layout is NCHW with OIHW weights.


def _conv_out_size(h: int, k: int, stride: int, pad: int) -> int:
    return (h + 2 * pad - k) // stride + 1


def _zero_pad(x: np.ndarray, pad: int) -> np.ndarray:
    if not pad:
        return x
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad : pad + h, pad : pad + w] = x
    return xp


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    x = _zero_pad(x, pad)
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    if pad:
        return np.ascontiguousarray(xp[:, :, pad : pad + h, pad : pad + w])
    return xp


def _conv_cols(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    if kh == 1 and kw == 1 and pad == 0:
        n, c = x.shape[:2]
        src = x[:, :, ::stride, ::stride] if stride > 1 else x
        return np.ascontiguousarray(src).reshape(n, c, -1)
    return _im2col(x, kh, kw, stride, pad)


def _conv_forward_from_cols(cols: np.ndarray, w: np.ndarray, out_hw) -> np.ndarray:
    o = w.shape[0]
    out = np.matmul(w.reshape(o, -1), cols)
    return out.reshape(cols.shape[0], o, *out_hw)


def _conv_forward_data(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    oh = _conv_out_size(x.shape[2], w.shape[2], stride, pad)
    ow = _conv_out_size(x.shape[3], w.shape[3], stride, pad)
    cols = _conv_cols(x, w.shape[2], w.shape[3], stride, pad)
    return _conv_forward_from_cols(cols, w, (oh, ow))


def _conv_x_grad_data(g: np.ndarray, w: np.ndarray, x_shape, stride: int, pad: int) -> np.ndarray:
    n, o, oh, ow = g.shape
    _, c, kh, kw = w.shape
    if kh == 1 and kw == 1 and pad == 0 and stride == 1:
        out = np.matmul(w.reshape(o, c).T, g.reshape(n, o, oh * ow))
        return out.reshape(x_shape)
    cols = np.matmul(w.reshape(o, -1).T, g.reshape(n, o, oh * ow))
    return _col2im(cols, x_shape, kh, kw, stride, pad)


def _conv_w_grad_from_cols(cols: np.ndarray, g: np.ndarray, w_shape) -> np.ndarray:
    o = w_shape[0]
    n = g.shape[0]
    wg = np.matmul(g.reshape(n, o, -1), cols.transpose(0, 2, 1)).sum(axis=0)
    return wg.reshape(w_shape)


def _conv_w_grad_data(x: np.ndarray, g: np.ndarray, w_shape, stride: int, pad: int) -> np.ndarray:
    cols = _conv_cols(x, w_shape[2], w_shape[3], stride, pad)
    return _conv_w_grad_from_cols(cols, g, w_shape)


def _check_conv_args(op: str, x: Tensor, w: Tensor, stride: int):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(op, f"expected NCHW input and OIHW weight, got {x.shape} and {w.shape}")
    if stride not in (1, 2):
        raise ShapeError(op, f"stride must be 1 or 2, got {stride}")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    _check_conv_args("conv2d", x, w, stride)
    if x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", f"input channels {x.shape[1]} != weight channels {w.shape[1]}")
    if x.shape[2] + 2 * padding < w.shape[2] or x.shape[3] + 2 * padding < w.shape[3]:
        raise ShapeError("conv2d", f"kernel {w.shape[2:]} larger than padded input {x.shape[2:]}")
    x_shape, w_shape = x.shape, w.shape

    def vjp(g):
        return (
            conv2d_x_grad(g, w, x_shape, stride, padding),
            conv2d_w_grad(x, g, w_shape, stride, padding),
        )

    return _result(_conv_forward_data(x.data, w.data, stride, padding), "conv2d", (x, w), vjp)


def conv2d_x_grad(g: Tensor, w: Tensor, x_shape, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of conv2d w.r.t. its input; also serves as transposed conv."""
    _check_conv_args("conv2d_x_grad", g, w, stride)
    if g.shape[1] != w.shape[0]:
        raise ShapeError("conv2d_x_grad", f"grad channels {g.shape[1]} != weight out-channels {w.shape[0]}")
    x_shape = tuple(int(s) for s in x_shape)
    w_shape = w.shape

    def vjp(gg):
        return (
            conv2d(gg, w, stride, padding),
            conv2d_w_grad(gg, g, w_shape, stride, padding),
        )

    return _result(_conv_x_grad_data(g.data, w.data, x_shape, stride, padding), "conv2d_x_grad", (g, w), vjp)


def conv2d_w_grad(x: Tensor, g: Tensor, w_shape, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of conv2d w.r.t. its weight."""
    if x.ndim != 4 or g.ndim != 4 or x.shape[0] != g.shape[0]:
        raise ShapeError("conv2d_w_grad", f"batch mismatch {x.shape} vs {g.shape}")
    w_shape = tuple(int(s) for s in w_shape)
    x_shape = x.shape

    def vjp(gw):
        return (
            conv2d_x_grad(g, gw, x_shape, stride, padding),
            conv2d(x, gw, stride, padding),
        )

    return _result(_conv_w_grad_data(x.data, g.data, w_shape, stride, padding), "conv2d_w_grad", (x, g), vjp)


def conv_transpose2d(x: Tensor, w: Tensor, stride: int = 2, padding: int = 1, output_size=None) -> Tensor:
    """Transposed convolution; weight layout (C_in, C_out, KH, KW).

    Defaults (k=4, stride=2, padding=1) give exact 2x upsampling. The output
    spatial size may be overridden for odd cases via `output_size`.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError("conv_transpose2d", f"input {x.shape} does not match weight {w.shape}")
    n, _, h, wd = x.shape
    kh, kw = w.shape[2], w.shape[3]
    if output_size is None:
        output_size = ((h - 1) * stride - 2 * padding + kh, (wd - 1) * stride - 2 * padding + kw)
    out_shape = (n, w.shape[1], int(output_size[0]), int(output_size[1]))
    return conv2d_x_grad(x, w, out_shape, stride, padding)


# -- normalization and resampling (composites) -------------------------------


def instance_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization with learnable scale/shift."""
    if x.ndim != 4:
        raise ShapeError("instance_norm", f"expected NCHW, got {x.shape}")
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError("instance_norm", f"scale/shift {gain.shape}/{bias.shape} do not match {x.shape[1]} channels")
    mu = mean(x, axis=(2, 3), keepdims=True)
    xc = _sub_bcast(x, mu)
    var = mean(mul(xc, xc), axis=(2, 3), keepdims=True)
    inv = pow_const(add_scalar(var, eps), -0.5)
    y = _mul_bcast(xc, inv)
    y = _mul_bcast(y, reshape(gain, (1, -1, 1, 1)))
    return bias_add(y, bias)


def group_norm(x: Tensor, gain: Tensor, bias: Tensor, groups: int | None = None, eps: float = 1e-5) -> Tensor:
    """Normalization over channel groups; group count defaults to min(32, C)."""
    if x.ndim != 4:
        raise ShapeError("group_norm", f"expected NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if groups is None:
        groups = min(32, c)
    if c % groups != 0:
        raise ShapeError("group_norm", f"{c} channels not divisible into {groups} groups")
    xg = reshape(x, (n, groups, (c // groups) * h * w))
    mu = mean(xg, axis=2, keepdims=True)
    xc = _sub_bcast(xg, mu)
    var = mean(mul(xc, xc), axis=2, keepdims=True)
    inv = pow_const(add_scalar(var, eps), -0.5)
    y = reshape(_mul_bcast(xc, inv), (n, c, h, w))
    y = _mul_bcast(y, reshape(gain, (1, -1, 1, 1)))
    return bias_add(y, bias)


def nearest_upsample(x: Tensor, factor: int = 2) -> Tensor:
    if x.ndim != 4:
        raise ShapeError("nearest_upsample", f"expected NCHW, got {x.shape}")
    n, c, h, w = x.shape
    y = reshape(x, (n, c, h, 1, w, 1))
    y = broadcast_to(y, (n, c, h, factor, w, factor))
    return reshape(y, (n, c, h * factor, w * factor))


# -- backward ------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    create_graph: bool = False,
    grad_output: Tensor | None = None,
) -> list[Tensor]:
    """Gradients of a scalar output w.r.t. `inputs`.

    Pure function of the recorded graph: calling it twice yields identical
    results. Inputs not on any path to the output get exact zeros. With
    `create_graph=True` the returned tensors are themselves attached, so
    they can be differentiated again.
    """
    if grad_output is None:
        if output.size != 1:
            raise ShapeError("grad", f"output must be scalar, got shape {output.shape}")
        seed = Tensor(np.ones(output.shape, dtype=output.data.dtype))
    else:
        if grad_output.shape != output.shape:
            raise ShapeError("grad", f"grad_output shape {grad_output.shape} != output shape {output.shape}")
        seed = grad_output

    cotangents: dict[int, Tensor] = {id(output): seed}
    order = _topo_order(output)
    for node in reversed(order):
        g = cotangents.pop(id(node), None)
        if g is None or node._vjp is None:
            if g is not None:
                cotangents[id(node)] = g
            continue
        with _set_grad(create_graph):
            parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            prev = cotangents.get(id(parent))
            if prev is None:
                cotangents[id(parent)] = pg
            elif create_graph:
                cotangents[id(parent)] = add(prev, pg)
            else:
                with no_grad():
                    cotangents[id(parent)] = add(prev, pg)
    return [cotangents.get(id(t), zeros_like(t)) for t in inputs]


def backward(loss: Tensor, params: dict[str, Tensor], create_graph: bool = False) -> dict[str, Tensor]:
    """Gradient map name -> tensor for a named parameter dict."""
    names = list(params)
    grads = grad(loss, [params[n] for n in names], create_graph=create_graph)
    return dict(zip(names, grads))


def grad_norm_sq(d_out: Tensor, x_input: Tensor) -> Tensor:
    """Per-sample squared L2 norm of d(d_out)/d(x_input), as a graph node.

    `d_out` must hold one scalar per batch element of `x_input`, each
    depending only on its own sample; the result has shape (N,) and remains
    differentiable w.r.t. anything upstream (e.g. discriminator weights).
    """
    if not x_input.requires_grad:
        raise ShapeError("grad_norm_sq", "x_input is detached from the graph")
    n = x_input.shape[0]
    if d_out.size != n:
        raise ShapeError("grad_norm_sq", f"need {n} per-sample outputs, got shape {d_out.shape}")
    total = sum_(d_out)
    (gx,) = grad(total, [x_input], create_graph=True)
    reduce_axes = tuple(range(1, gx.ndim))
    sq = mul(gx, gx)
    return sum_(sq, axis=reduce_axes) if reduce_axes else sq


def parameter(data, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)

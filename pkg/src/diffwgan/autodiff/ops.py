"""Primitive operations.

Every primitive is a :class:`Function` subclass; the lowercase functions at the
bottom are the public entry points. Backward rules only use other primitives,
so a gradient produced with ``create_graph=True`` can itself be differentiated.
"""

from __future__ import annotations

import numpy as np

from .tensor import Function, ShapeError, Tensor, as_tensor

OPS: dict[str, type[Function]] = {}


def register(cls: type[Function]) -> type[Function]:
    OPS[cls.name] = cls
    return cls


def _bshape(name: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


def _sum_to_np(x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    lead = x.ndim - len(shape)
    if lead:
        x = x.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and x.shape[i] != 1)
    if axes:
        x = x.sum(axis=axes, keepdims=True)
    return x


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    return g if g.shape == tuple(shape) else sum_to(g, shape)


# ----------------------------------------------------------------- elementwise


@register
class Add(Function):
    name = "add"

    def forward(self, a, b):
        _bshape(self.name, a, b)
        return a + b

    def backward(self, g):
        a, b = self.inputs
        na, nb = self.needs_input_grad
        return (_unbroadcast(g, a.shape) if na else None,
                _unbroadcast(g, b.shape) if nb else None)


@register
class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        _bshape(self.name, a, b)
        return a - b

    def backward(self, g):
        a, b = self.inputs
        na, nb = self.needs_input_grad
        return (_unbroadcast(g, a.shape) if na else None,
                _unbroadcast(neg(g), b.shape) if nb else None)


@register
class Mul(Function):
    name = "mul"
    check_finite = True

    def forward(self, a, b):
        _bshape(self.name, a, b)
        return a * b

    def backward(self, g):
        a, b = self.inputs
        na, nb = self.needs_input_grad
        return (_unbroadcast(mul(g, b), a.shape) if na else None,
                _unbroadcast(mul(g, a), b.shape) if nb else None)


@register
class Div(Function):
    name = "div"
    check_finite = True

    def forward(self, a, b):
        _bshape(self.name, a, b)
        return a / b

    def backward(self, g):
        a, b = self.inputs
        na, nb = self.needs_input_grad
        ga = _unbroadcast(div(g, b), a.shape) if na else None
        gb = None
        if nb:
            gb = _unbroadcast(neg(div(mul(g, self.out), b)), b.shape)
        return ga, gb


@register
class Neg(Function):
    name = "neg"

    def forward(self, a):
        return -a

    def backward(self, g):
        return (neg(g),)


@register
class PowScalar(Function):
    name = "pow"
    check_finite = True
    exponent = 2.0

    def forward(self, a):
        return a ** self.exponent

    def backward(self, g):
        (a,) = self.inputs
        p = self.exponent
        if p == 1.0:
            return (g,)
        return (mul(g, mul(pow_scalar(a, p - 1.0), p)),)


@register
class Exp(Function):
    name = "exp"
    check_finite = True

    def forward(self, a):
        return np.exp(a)

    def backward(self, g):
        return (mul(g, self.out),)


@register
class Log(Function):
    name = "log"
    check_finite = True

    def forward(self, a):
        return np.log(a)

    def backward(self, g):
        return (div(g, self.inputs[0]),)


@register
class Sqrt(Function):
    name = "sqrt"
    check_finite = True

    def forward(self, a):
        return np.sqrt(a)

    def backward(self, g):
        return (div(g, mul(self.out, 2.0)),)


@register
class Square(Function):
    name = "square"
    check_finite = True

    def forward(self, a):
        return a * a

    def backward(self, g):
        return (mul(g, mul(self.inputs[0], 2.0)),)


@register
class Abs(Function):
    name = "abs"

    def forward(self, a):
        return np.abs(a)

    def backward(self, g):
        return (mul(g, Tensor(np.sign(self.inputs[0].data))),)


@register
class Tanh(Function):
    name = "tanh"

    def forward(self, a):
        return np.tanh(a)

    def backward(self, g):
        y = self.out
        return (mul(g, sub(1.0, square(y))),)


def _sigmoid_np(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@register
class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        return _sigmoid_np(a)

    def backward(self, g):
        y = self.out
        return (mul(g, mul(y, sub(1.0, y))),)


@register
class SiLU(Function):
    name = "silu"

    def forward(self, a):
        return a * _sigmoid_np(a)

    def backward(self, g):
        (x,) = self.inputs
        s = sigmoid(x)
        # d/dx x*s(x) = s * (1 + x * (1 - s))
        return (mul(g, mul(s, add(1.0, mul(x, sub(1.0, s))))),)


@register
class LeakyReLU(Function):
    name = "leaky_relu"
    slope = 0.0

    def forward(self, a):
        return np.where(a > 0, a, a * self.slope)

    def backward(self, g):
        (x,) = self.inputs
        return (mul(g, Tensor(np.where(x.data > 0, 1.0, self.slope))),)


@register
class ClampMin(Function):
    name = "clamp_min"
    lo = 0.0

    def forward(self, a):
        return np.maximum(a, self.lo)

    def backward(self, g):
        (x,) = self.inputs
        return (mul(g, Tensor((x.data > self.lo).astype(np.float64))),)


# ------------------------------------------------------------------ reductions


def _norm_axis(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _keep_shape(shape, axes):
    return tuple(1 if i in axes else n for i, n in enumerate(shape))


@register
class Sum(Function):
    name = "sum"
    check_finite = True
    axis = None
    keepdims = False

    def forward(self, a):
        self.axes = _norm_axis(self.axis, a.ndim)
        return a.sum(axis=self.axes, keepdims=self.keepdims)

    def backward(self, g):
        (x,) = self.inputs
        if not self.keepdims:
            g = reshape(g, _keep_shape(x.shape, self.axes))
        return (broadcast_to(g, x.shape),)


@register
class Mean(Function):
    name = "mean"
    axis = None
    keepdims = False

    def forward(self, a):
        self.axes = _norm_axis(self.axis, a.ndim)
        self.count = int(np.prod([a.shape[i] for i in self.axes])) if self.axes else 1
        return a.mean(axis=self.axes, keepdims=self.keepdims)

    def backward(self, g):
        (x,) = self.inputs
        if not self.keepdims:
            g = reshape(g, _keep_shape(x.shape, self.axes))
        return (mul(broadcast_to(g, x.shape), 1.0 / self.count),)


@register
class L2Norm(Function):
    """Euclidean norm over ``axis`` (all axes by default)."""

    name = "l2_norm"
    check_finite = True
    axis = None
    keepdims = False
    tiny = 1e-30

    def forward(self, a):
        self.axes = _norm_axis(self.axis, a.ndim)
        return np.sqrt((a * a).sum(axis=self.axes, keepdims=self.keepdims))

    def backward(self, g):
        (x,) = self.inputs
        y = self.out
        if not self.keepdims:
            ks = _keep_shape(x.shape, self.axes)
            g, y = reshape(g, ks), reshape(y, ks)
        # zero-norm inputs are zero vectors, so the clamp only guards 0/0
        return (mul(broadcast_to(div(g, clamp_min(y, self.tiny)), x.shape), x),)


@register
class Softmax(Function):
    name = "softmax"
    check_finite = True
    axis = -1

    def forward(self, a):
        z = a - a.max(axis=self.axis, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=self.axis, keepdims=True)

    def backward(self, g):
        y = self.out
        inner = sum(mul(g, y), axis=self.axis, keepdims=True)
        return (mul(y, sub(g, inner)),)


@register
class LayerNorm(Function):
    """Normalise over the last axis (no affine part)."""

    name = "layer_norm"
    check_finite = True
    eps = 1e-5

    def forward(self, a):
        mu = a.mean(axis=-1, keepdims=True)
        var = ((a - mu) ** 2).mean(axis=-1, keepdims=True)
        return (a - mu) / np.sqrt(var + self.eps)

    def backward(self, g):
        (x,) = self.inputs
        xc = sub(x, mean(x, axis=-1, keepdims=True))
        inv = pow_scalar(add(mean(square(xc), axis=-1, keepdims=True), self.eps), -0.5)
        xhat = mul(xc, inv)
        gm = mean(g, axis=-1, keepdims=True)
        gxm = mean(mul(g, xhat), axis=-1, keepdims=True)
        return (mul(inv, sub(sub(g, gm), mul(xhat, gxm))),)


# ---------------------------------------------------------------- linear algebra


@register
class MatMul(Function):
    name = "matmul"
    check_finite = True

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul: operands need ndim >= 2, got shapes {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
        return np.matmul(a, b)

    def backward(self, g):
        a, b = self.inputs
        na, nb = self.needs_input_grad
        ga = _unbroadcast(matmul(g, swapaxes(b)), a.shape) if na else None
        gb = _unbroadcast(matmul(swapaxes(a), g), b.shape) if nb else None
        return ga, gb


# ---------------------------------------------------------------- shape moves


@register
class Reshape(Function):
    name = "reshape"
    shape = ()

    def forward(self, a):
        try:
            return a.reshape(self.shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot reshape {a.shape} into {self.shape}") from None

    def backward(self, g):
        return (reshape(g, self.inputs[0].shape),)


@register
class Transpose(Function):
    name = "transpose"
    axes = None

    def forward(self, a):
        if self.axes is None:
            self.axes = tuple(reversed(range(a.ndim)))
        if sorted(self.axes) != list(range(a.ndim)):
            raise ShapeError(f"transpose: axes {self.axes} invalid for shape {a.shape}")
        return np.asarray(a.transpose(self.axes), order="C")

    def backward(self, g):
        return (transpose(g, tuple(np.argsort(self.axes))),)


@register
class BroadcastTo(Function):
    name = "broadcast_to"
    shape = ()

    def forward(self, a):
        try:
            return np.broadcast_to(a, self.shape).copy()
        except ValueError:
            raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {self.shape}") from None

    def backward(self, g):
        return (sum_to(g, self.inputs[0].shape),)


@register
class SumTo(Function):
    """Reduce a broadcast result back to ``shape`` (adjoint of broadcast_to)."""

    name = "sum_to"
    shape = ()

    def forward(self, a):
        return _sum_to_np(a, tuple(self.shape))

    def backward(self, g):
        return (broadcast_to(g, self.inputs[0].shape),)


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


@register
class GetItem(Function):
    name = "index"
    index = None

    def forward(self, a):
        try:
            return np.array(a[self.index], dtype=np.float64)
        except IndexError as exc:
            raise ShapeError(f"index: {exc} for shape {a.shape}") from None

    def backward(self, g):
        return (scatter(g, self.index, self.inputs[0].shape),)


@register
class Scatter(Function):
    """Place ``a`` at ``index`` inside a zero tensor of ``shape``; duplicates add."""

    name = "scatter"
    index = None
    shape = ()

    def forward(self, a):
        out = np.zeros(self.shape)
        if _is_advanced(self.index):
            np.add.at(out, self.index, a)
        else:
            out[self.index] += a
        return out

    def backward(self, g):
        return (getitem(g, self.index),)


@register
class Concat(Function):
    name = "concat"
    axis = 0

    def forward(self, *arrays):
        try:
            return np.concatenate(arrays, axis=self.axis)
        except ValueError:
            raise ShapeError(f"concat: shapes {[a.shape for a in arrays]} along axis {self.axis}") from None

    def backward(self, g):
        grads = []
        start = 0
        axis = self.axis % g.ndim
        for t, need in zip(self.inputs, self.needs_input_grad):
            n = t.shape[axis]
            if need:
                idx = tuple(slice(None) if i != axis else slice(start, start + n) for i in range(g.ndim))
                grads.append(getitem(g, idx))
            else:
                grads.append(None)
            start += n
        return tuple(grads)


@register
class Pad(Function):
    """Zero padding; ``widths`` is a per-axis list of (before, after)."""

    name = "pad"
    widths = ()

    def forward(self, a):
        if len(self.widths) != a.ndim:
            raise ShapeError(f"pad: {len(self.widths)} pad pairs for shape {a.shape}")
        return np.pad(a, self.widths)

    def backward(self, g):
        idx = tuple(slice(lo, n - hi) for (lo, hi), n in zip(self.widths, g.shape))
        return (getitem(g, idx),)


# ------------------------------------------------------------ im2col for convs


def _conv_out(n: int, k: int, stride: int, dilation: int) -> int:
    return (n - dilation * (k - 1) - 1) // stride + 1


def _unfold_np(x, kh, kw, sh, sw, dh, dw):
    b, c, h, w = x.shape
    ho, wo = _conv_out(h, kh, sh, dh), _conv_out(w, kw, sw, dw)
    if ho < 1 or wo < 1:
        raise ShapeError(f"unfold2d: input {x.shape} too small for kernel ({kh},{kw}) dilation ({dh},{dw})")
    cols = np.empty((b, c, kh, kw, ho, wo))
    for i in range(kh):
        r0 = i * dh
        for j in range(kw):
            c0 = j * dw
            cols[:, :, i, j] = x[:, :, r0:r0 + sh * (ho - 1) + 1:sh, c0:c0 + sw * (wo - 1) + 1:sw]
    return cols.reshape(b, c * kh * kw, ho * wo)


def _fold_np(cols, shape, kh, kw, sh, sw, dh, dw):
    b, c, h, w = shape
    ho, wo = _conv_out(h, kh, sh, dh), _conv_out(w, kw, sw, dw)
    cols = cols.reshape(b, c, kh, kw, ho, wo)
    out = np.zeros(shape)
    for i in range(kh):
        r0 = i * dh
        for j in range(kw):
            c0 = j * dw
            out[:, :, r0:r0 + sh * (ho - 1) + 1:sh, c0:c0 + sw * (wo - 1) + 1:sw] += cols[:, :, i, j]
    return out


class _WindowOp(Function):
    kernel = (1, 1)
    stride = (1, 1)
    dilation = (1, 1)

    def _params(self):
        return (*self.kernel, *self.stride, *self.dilation)


@register
class Unfold2d(_WindowOp):
    """(B, C, H, W) -> (B, C*kh*kw, Ho*Wo) sliding-window patches."""

    name = "unfold2d"

    def forward(self, a):
        if a.ndim != 4:
            raise ShapeError(f"unfold2d: expected 4-d input, got shape {a.shape}")
        return _unfold_np(a, *self._params())

    def backward(self, g):
        x = self.inputs[0]
        return (fold2d(g, x.shape, self.kernel, self.stride, self.dilation),)


@register
class Fold2d(_WindowOp):
    """Adjoint of :class:`Unfold2d`: overlap-add patches back into (B, C, H, W)."""

    name = "fold2d"
    shape = ()

    def forward(self, a):
        return _fold_np(a, tuple(self.shape), *self._params())

    def backward(self, g):
        return (unfold2d(g, self.kernel, self.stride, self.dilation),)


# ------------------------------------------------------------------ public API


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def neg(a) -> Tensor:
    return Neg.apply(a)


def pow_scalar(a, exponent: float) -> Tensor:
    return PowScalar.apply(a, exponent=float(exponent))


def exp(a) -> Tensor:
    return Exp.apply(a)


def log(a) -> Tensor:
    return Log.apply(a)


def sqrt(a) -> Tensor:
    return Sqrt.apply(a)


def square(a) -> Tensor:
    return Square.apply(a)


def abs(a) -> Tensor:  # noqa: A001
    return Abs.apply(a)


def tanh(a) -> Tensor:
    return Tanh.apply(a)


def sigmoid(a) -> Tensor:
    return Sigmoid.apply(a)


def silu(a) -> Tensor:
    return SiLU.apply(a)


def relu(a) -> Tensor:
    return LeakyReLU.apply(a, slope=0.0)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    return LeakyReLU.apply(a, slope=float(slope))


def clamp_min(a, lo: float) -> Tensor:
    return ClampMin.apply(a, lo=float(lo))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    return Mean.apply(a, axis=axis, keepdims=keepdims)


def l2_norm(a, axis=None, keepdims: bool = False) -> Tensor:
    return L2Norm.apply(a, axis=axis, keepdims=keepdims)


def softmax(a, axis: int = -1) -> Tensor:
    return Softmax.apply(a, axis=axis)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(a, eps=eps)


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


def reshape(a, shape) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes=None) -> Tensor:
    return Transpose.apply(a, axes=None if axes is None else tuple(int(i) for i in axes))


def swapaxes(a, ax1: int = -2, ax2: int = -1) -> Tensor:
    nd = as_tensor(a).ndim
    axes = list(range(nd))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    if a.shape == tuple(shape):
        return a
    return BroadcastTo.apply(a, shape=tuple(shape))


def sum_to(a, shape) -> Tensor:
    return SumTo.apply(a, shape=tuple(shape))


def getitem(a, index) -> Tensor:
    return GetItem.apply(a, index=index)


def scatter(a, index, shape) -> Tensor:
    return Scatter.apply(a, index=index, shape=tuple(shape))


def embed(weight, ids) -> Tensor:
    """Row lookup ``weight[ids]`` for an integer id array."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ShapeError(f"embed: ids must be integers, got dtype {ids.dtype}")
    w = as_tensor(weight)
    if ids.size and (ids.min() < 0 or ids.max() >= w.shape[0]):
        raise ShapeError(f"embed: ids outside [0, {w.shape[0]}) for table of shape {w.shape}")
    return getitem(w, ids)


def concat(tensors, axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    nd = tensors[0].ndim + 1
    axis = axis % nd
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def pad(a, widths) -> Tensor:
    return Pad.apply(a, widths=tuple((int(lo), int(hi)) for lo, hi in widths))


def unfold2d(a, kernel, stride=(1, 1), dilation=(1, 1)) -> Tensor:
    return Unfold2d.apply(a, kernel=tuple(kernel), stride=tuple(stride), dilation=tuple(dilation))


def fold2d(a, shape, kernel, stride=(1, 1), dilation=(1, 1)) -> Tensor:
    return Fold2d.apply(a, shape=tuple(shape), kernel=tuple(kernel), stride=tuple(stride),
                        dilation=tuple(dilation))


def broadcast(a, shape) -> Tensor:
    return broadcast_to(a, shape)


def _pair(v) -> tuple[int, int]:
    return (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1) -> Tensor:
    """2-D cross-correlation. x: (B, C, H, W); weight: (O, C, kh, kw); bias: (O,)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input channels {x.shape} do not match weight {weight.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    o, c, kh, kw = weight.shape
    if ph or pw:
        x = pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    b, _, h, w = x.shape
    ho, wo = _conv_out(h, kh, sh, dh), _conv_out(w, kw, sw, dw)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for weight {weight.shape}")
    if kh == kw == sh == sw == 1:
        cols = reshape(x, (b, c, h * w))
    else:
        cols = unfold2d(x, (kh, kw), (sh, sw), (dh, dw))
    out = matmul(reshape(weight, (o, c * kh * kw)), cols)
    out = reshape(out, (b, o, ho, wo))
    if bias is not None:
        out = add(out, reshape(bias, (1, o, 1, 1)))
    return out


def conv1d(x, weight, bias=None, stride=1, padding=0, dilation=1) -> Tensor:
    """1-D cross-correlation. x: (B, C, L); weight: (O, C, k); bias: (O,)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d: expected 3-d input and weight, got {x.shape} and {weight.shape}")
    b, c, n = x.shape
    o, _, k = weight.shape
    out = conv2d(reshape(x, (b, c, 1, n)), reshape(weight, (o, weight.shape[1], 1, k)), bias,
                 stride=(1, stride), padding=(0, padding), dilation=(1, dilation))
    return reshape(out, (b, o, out.shape[-1]))


# -------------------------------------------------------------- operator sugar


def _rsub(a, b):
    return sub(b, a)


def _rdiv(a, b):
    return div(b, a)


def _getitem(a, index):
    if isinstance(index, Tensor):
        raise TypeError("tensor indices are not supported; index with numpy arrays")
    return getitem(a, index)


Tensor.__add__ = add
Tensor.__radd__ = add
Tensor.__sub__ = sub
Tensor.__rsub__ = _rsub
Tensor.__mul__ = mul
Tensor.__rmul__ = mul
Tensor.__truediv__ = div
Tensor.__rtruediv__ = _rdiv
Tensor.__neg__ = neg
Tensor.__matmul__ = matmul
Tensor.__pow__ = pow_scalar
Tensor.__getitem__ = _getitem
Tensor.sum = sum
Tensor.mean = mean
Tensor.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 and not np.isscalar(shape[0]) else shape)
Tensor.transpose = transpose
Tensor.T = property(lambda self: transpose(self))

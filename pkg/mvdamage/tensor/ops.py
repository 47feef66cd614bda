"""Differentiable operators over N×C×H×W float arrays.

Every forward is pure: inputs are never mutated, and the same inputs give
bitwise-identical outputs.
"""
import builtins
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Function, ShapeError, Tensor, as_array

Operand = Union[Tensor, np.ndarray, float, int]


def _tensor(value: Operand, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(as_array(value, dtype))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    for _ in range(grad.ndim - len(shape)):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# region Elementwise


class Add(Function):
    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return (
            _unbroadcast(grad * self.y, self.x.shape),
            _unbroadcast(grad * self.x, self.y.shape),
        )


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class Power(Function):
    def forward(self, x, exponent: float):
        self.x = x
        self.exponent = exponent
        return x ** exponent

    def backward(self, grad):
        return (grad * self.exponent * self.x ** (self.exponent - 1),)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Clip(Function):
    def forward(self, x, low: float, high: float):
        self.inside = (x >= low) & (x <= high)
        return np.clip(x, low, high)

    def backward(self, grad):
        return (grad * self.inside,)


class ScaleGradient(Function):
    def forward(self, x, factor: float):
        self.factor = factor
        return x.copy()

    def backward(self, grad):
        return (grad * self.factor,)


def add(x: Operand, y: Operand) -> Tensor:
    x = _tensor(x, y if isinstance(y, Tensor) else None)
    return Add.apply(x, _tensor(y, x))


def mul(x: Operand, y: Operand) -> Tensor:
    x = _tensor(x, y if isinstance(y, Tensor) else None)
    return Mul.apply(x, _tensor(y, x))


def neg(x: Operand) -> Tensor:
    return Neg.apply(_tensor(x))


def power(x: Tensor, exponent: float) -> Tensor:
    return Power.apply(x, exponent=exponent)


def exp(x: Tensor) -> Tensor:
    return Exp.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    return Clip.apply(x, low=low, high=high)


def scale_gradient(x: Tensor, factor: float) -> Tensor:
    """Identity on the forward pass, gradient multiplied by factor"""
    return ScaleGradient.apply(x, factor=factor)


# endregion

# region Activations


class ReLU(Function):
    def forward(self, x):
        self.positive = x > 0
        return np.where(self.positive, x, np.zeros_like(x))

    def backward(self, grad):
        return (grad * self.positive,)


class Sigmoid(Function):
    def forward(self, x):
        self.out = np.exp(-np.logaddexp(0, -x)).astype(x.dtype, copy=False)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


class Softmax(Function):
    def forward(self, x, axis: int):
        self.axis = axis
        shifted = np.exp(x - x.max(axis=axis, keepdims=True))
        self.out = shifted / shifted.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        dot = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - dot),)


ACTIVATIONS = ("relu", "sigmoid", "softmax_over_channels")


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return ReLU.apply(x)
    elif kind == "sigmoid":
        return Sigmoid.apply(x)
    elif kind == "softmax_over_channels":
        if x.ndim < 2 or x.shape[1] < 1:
            raise ShapeError("softmax needs a channel axis", x.shape)
        return Softmax.apply(x, axis=1)
    raise ValueError(f"Unknown activation {kind!r}, expected one of {ACTIVATIONS}")


def relu(x: Tensor) -> Tensor:
    return activation("relu", x)


def sigmoid(x: Tensor) -> Tensor:
    return activation("sigmoid", x)


def softmax(x: Tensor) -> Tensor:
    return activation("softmax_over_channels", x)


# endregion

# region Reductions and reshaping


class Sum(Function):
    def forward(self, x, axis, keepdims: bool):
        self.shape = x.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, x, shape):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Concat(Function):
    def forward(self, *xs, axis: int):
        self.axis = axis
        self.bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return np.concatenate(xs, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.bounds, axis=self.axis))


class Maximum(Function):
    """Elementwise maximum across several same-shape tensors; first wins ties"""

    def forward(self, *xs):
        stacked = np.stack(xs)
        self.winner = stacked.argmax(axis=0)
        self.count = len(xs)
        return np.take_along_axis(stacked, self.winner[None], axis=0)[0]

    def backward(self, grad):
        return tuple(grad * (self.winner == i) for i in range(self.count))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return Reshape.apply(x, shape=shape)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not xs:
        raise ValueError("concat needs at least one tensor")
    reference = list(xs[0].shape)
    for x in xs[1:]:
        other = list(x.shape)
        if len(other) != len(reference) or any(
            a != b for i, (a, b) in enumerate(zip(reference, other)) if i != axis % len(reference)
        ):
            raise ShapeError("concat shape mismatch", xs[0].shape, x.shape)
    return Concat.apply(*xs, axis=axis)


def maximum(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ValueError("maximum needs at least one tensor")
    for x in xs[1:]:
        if x.shape != xs[0].shape:
            raise ShapeError("maximum shape mismatch", xs[0].shape, x.shape)
    return Maximum.apply(*xs)


# endregion

# region Dense


class MatMul(Function):
    def forward(self, x, w):
        self.x, self.w = x, w
        return x @ w

    def backward(self, grad):
        return grad @ self.w.T, self.x.T @ grad


def matmul(x: Tensor, w: Tensor) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError("matmul inner dimensions disagree", x.shape, w.shape)
    return MatMul.apply(x, w)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map x·weights + bias for x of shape N×D"""
    if bias.shape != (weights.shape[-1],):
        raise ShapeError("dense bias does not match weights", weights.shape, bias.shape)
    return add(matmul(x, weights), bias)


# endregion

# region Convolution


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # N, C, H', W', kh, kw
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if not padding:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _conv_forward(x, kernel, bias, stride, padding):
    windows = _windows(_pad(x, padding), kernel.shape[2], kernel.shape[3], stride)
    out = np.tensordot(windows, kernel, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += bias[None, :, None, None]
    return out, windows


def _conv_backward(grad, x_shape, kernel, windows, stride, padding):
    n, c, h, w = x_shape
    kh, kw = kernel.shape[2], kernel.shape[3]
    out_h, out_w = grad.shape[2], grad.shape[3]

    grad_kernel = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
    grad_bias = grad.sum(axis=(0, 2, 3))

    grad_padded = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=grad.dtype)
    row_end = stride * (out_h - 1) + 1
    col_end = stride * (out_w - 1) + 1
    for i in range(kh):
        for j in range(kw):
            contribution = np.tensordot(grad, kernel[:, :, i, j], axes=([1], [0]))
            grad_padded[:, :, i : i + row_end : stride, j : j + col_end : stride] += (
                contribution.transpose(0, 3, 1, 2)
            )
    grad_x = grad_padded[:, :, padding : padding + h, padding : padding + w]
    return np.ascontiguousarray(grad_x), grad_kernel, grad_bias


class Conv2d(Function):
    def forward(self, x, kernel, bias, stride: int, padding: int):
        self.x_shape = x.shape
        self.kernel = kernel
        self.stride, self.padding = stride, padding
        out, self.windows = _conv_forward(x, kernel, bias, stride, padding)
        return out

    def backward(self, grad):
        return _conv_backward(
            grad, self.x_shape, self.kernel, self.windows, self.stride, self.padding
        )


class DepthwiseConv2d(Function):
    """One spatial filter per channel; each channel reuses the conv2d kernel"""

    def forward(self, x, kernel, bias, stride: int, padding: int):
        self.x_shape = x.shape
        self.kernel = kernel
        self.stride, self.padding = stride, padding
        self.windows = []
        outputs = []
        for c in range(x.shape[1]):
            out, windows = _conv_forward(
                x[:, c : c + 1], kernel[c : c + 1], bias[c : c + 1], stride, padding
            )
            outputs.append(out)
            self.windows.append(windows)
        return np.concatenate(outputs, axis=1)

    def backward(self, grad):
        n, _, h, w = self.x_shape
        grads_x, grads_k, grads_b = [], [], []
        for c, windows in enumerate(self.windows):
            gx, gk, gb = _conv_backward(
                grad[:, c : c + 1],
                (n, 1, h, w),
                self.kernel[c : c + 1],
                windows,
                self.stride,
                self.padding,
            )
            grads_x.append(gx)
            grads_k.append(gk)
            grads_b.append(gb)
        return (
            np.concatenate(grads_x, axis=1),
            np.concatenate(grads_k, axis=0),
            np.concatenate(grads_b, axis=0),
        )


def _check_conv(x: Tensor, kernel: Tensor, bias: Tensor, stride: int, padding: int, channels: int):
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError("convolution expects N×C×H×W input and 4-d kernel", x.shape, kernel.shape)
    if channels != x.shape[1]:
        raise ShapeError("kernel channels do not match input channels", x.shape, kernel.shape)
    if bias.shape != (kernel.shape[0],):
        raise ShapeError("bias does not match kernel filters", kernel.shape, bias.shape)
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} padding={padding}")
    if kernel.shape[2] > x.shape[2] + 2 * padding or kernel.shape[3] > x.shape[3] + 2 * padding:
        raise ShapeError("kernel larger than padded input", x.shape, kernel.shape)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    _check_conv(x, kernel, bias, stride, padding, kernel.shape[1] if kernel.ndim == 4 else -1)
    return Conv2d.apply(x, kernel, bias, stride=stride, padding=padding)


def depthwise_conv2d(
    x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    if kernel.ndim == 4 and (kernel.shape[1] != 1 or kernel.shape[0] != x.shape[1]):
        raise ShapeError("depthwise kernel must be C×1×kH×kW", x.shape, kernel.shape)
    _check_conv(x, kernel, bias, stride, padding, x.shape[1] if x.ndim == 4 else -1)
    return DepthwiseConv2d.apply(x, kernel, bias, stride=stride, padding=padding)


def depthwise_separable_conv(
    x: Tensor,
    depthwise_kernel: Tensor,
    pointwise_kernel: Tensor,
    depthwise_bias: Tensor,
    pointwise_bias: Tensor,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Per-channel spatial convolution followed by a 1×1 cross-channel convolution"""
    if pointwise_kernel.ndim != 4 or pointwise_kernel.shape[2:] != (1, 1):
        raise ShapeError("pointwise kernel must be F×C×1×1", pointwise_kernel.shape)
    spatial = depthwise_conv2d(x, depthwise_kernel, depthwise_bias, stride, padding)
    return conv2d(spatial, pointwise_kernel, pointwise_bias)


# endregion

# region Pooling and resampling


class MaxPool2d(Function):
    def forward(self, x, window: int, stride: int):
        n, c, h, w = x.shape
        self.x_shape = x.shape
        windows = _windows(x, window, window, stride)
        out_h, out_w = windows.shape[2], windows.shape[3]
        flat = windows.reshape(n, c, out_h, out_w, window * window)
        # argmax picks the first maximum in row-major window order
        arg = flat.argmax(axis=-1)
        rows = np.arange(out_h)[:, None] * stride + arg // window
        cols = np.arange(out_w)[None, :] * stride + arg % window
        base = (np.arange(n)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * h
        self.flat_index = ((base + rows) * w + cols).reshape(-1)
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        out = np.zeros(int(np.prod(self.x_shape)), dtype=grad.dtype)
        np.add.at(out, self.flat_index, grad.reshape(-1))
        return (out.reshape(self.x_shape),)


def maxpool2d(x: Tensor, window: int, stride: Optional[int] = None) -> Tensor:
    stride = window if stride is None else stride
    if x.ndim != 4:
        raise ShapeError("maxpool2d expects N×C×H×W", x.shape)
    if window < 1 or stride < 1:
        raise ValueError(f"invalid window={window} stride={stride}")
    if window > x.shape[2] or window > x.shape[3]:
        raise ShapeError(f"pool window {window} larger than input", x.shape)
    return MaxPool2d.apply(x, window=window, stride=stride)


class Resample2d(Function):
    """out = rows · x · colsᵀ over the two spatial axes"""

    def forward(self, x, rows: np.ndarray, cols: np.ndarray):
        self.rows = rows.astype(x.dtype, copy=False)
        self.cols = cols.astype(x.dtype, copy=False)
        return np.matmul(np.matmul(self.rows, x), self.cols.T)

    def backward(self, grad):
        return (np.matmul(np.matmul(self.rows.T, grad), self.cols),)


def bilinear_weights(in_size: int, out_size: int) -> np.ndarray:
    """Interpolation matrix (out×in), half-pixel centers (align corners off)"""
    weights = np.zeros((out_size, in_size), dtype=np.float64)
    scale = in_size / out_size
    for dst in range(out_size):
        src = (dst + 0.5) * scale - 0.5
        src = min(max(src, 0.0), in_size - 1.0)
        low = int(np.floor(src))
        high = min(low + 1, in_size - 1)
        frac = src - low
        weights[dst, low] += 1.0 - frac
        weights[dst, high] += frac
    return weights


def average_weights(in_size: int, bins: int) -> np.ndarray:
    """Adaptive average pooling matrix (bins×in) with floor/ceil bin edges"""
    weights = np.zeros((bins, in_size), dtype=np.float64)
    for b in range(bins):
        start = (b * in_size) // bins
        end = -(-((b + 1) * in_size) // bins)
        weights[b, start:end] = 1.0 / (end - start)
    return weights


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize target must be positive, got {out_h}×{out_w}")
    if x.ndim != 4:
        raise ShapeError("bilinear_resize expects N×C×H×W", x.shape)
    rows = bilinear_weights(x.shape[2], out_h)
    cols = bilinear_weights(x.shape[3], out_w)
    return Resample2d.apply(x, rows=rows, cols=cols)


def adaptive_avg_pool(x: Tensor, bins: int) -> Tensor:
    if x.ndim != 4:
        raise ShapeError("adaptive_avg_pool expects N×C×H×W", x.shape)
    if bins < 1 or bins > builtins.min(x.shape[2], x.shape[3]):
        raise ShapeError(f"pool bins {bins} do not fit the input", x.shape)
    rows = average_weights(x.shape[2], bins)
    cols = average_weights(x.shape[3], bins)
    return Resample2d.apply(x, rows=rows, cols=cols)


# endregion

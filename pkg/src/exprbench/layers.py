"""Forward and backward passes for every layer kind the benchmark networks use.

The functional API (``conv2d_forward`` and friends) takes explicit parameters
and returns plain arrays; the :class:`Layer` subclasses at the bottom wrap
those functions with the caching a training step needs.

Conventions:

* convolution is cross-correlation (kernel not flipped);
* output size per axis is ``floor((in + pad_before + pad_after - k) / stride) + 1``;
* max pooling never selects a padded cell, average pooling divides by the
  full window area including padded zeros;
* dropout is inverted: train-mode survivors are scaled by ``1/(1-p)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError
from .tensor import Rng


@dataclass(frozen=True)
class PadSpec:
    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0

    def __post_init__(self):
        if min(self.top, self.bottom, self.left, self.right) < 0:
            raise ValueError(f"negative padding in {self}")

    @classmethod
    def symmetric(cls, p: int) -> "PadSpec":
        return cls(p, p, p, p)

    @classmethod
    def top_left(cls, p: int) -> "PadSpec":
        """Padding only before each axis (the asterisk notation)."""
        return cls(p, 0, p, 0)

    @property
    def is_zero(self) -> bool:
        return self.top == self.bottom == self.left == self.right == 0


def output_size(size: int, k: int, stride: int, before: int, after: int) -> int:
    span = size + before + after
    if span < k:
        raise ShapeError(f"window {k} larger than padded input {span}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    return (span - k) // stride + 1


def output_hw(h: int, w: int, kernel: tuple[int, int], stride: int, pad: PadSpec) -> tuple[int, int]:
    return (
        output_size(h, kernel[0], stride, pad.top, pad.bottom),
        output_size(w, kernel[1], stride, pad.left, pad.right),
    )


def _pad(x: np.ndarray, pad: PadSpec, value: float = 0.0) -> np.ndarray:
    if pad.is_zero:
        return np.ascontiguousarray(x)
    return np.pad(
        x,
        ((0, 0), (0, 0), (pad.top, pad.bottom), (pad.left, pad.right)),
        mode="constant",
        constant_values=value,
    )


def _unpad(xp: np.ndarray, pad: PadSpec) -> np.ndarray:
    hp, wp = xp.shape[2:]
    return xp[:, :, pad.top:hp - pad.bottom, pad.left:wp - pad.right]


def _require_4d(x: np.ndarray, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be NCHW, got shape {x.shape}")


# --------------------------------------------------------------------------
# convolution

@dataclass
class ConvParams:
    kernel: tuple[int, int]
    stride: int
    pad: PadSpec
    in_channels: int
    out_channels: int
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        want = (self.out_channels, self.in_channels, *self.kernel)
        if self.weights.shape != want:
            raise ShapeError(f"conv weights {self.weights.shape} do not match {want}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"conv bias {self.bias.shape} does not match ({self.out_channels},)")
        if self.stride < 1:
            raise ShapeError("stride must be >= 1")


def _conv_geometry(x: np.ndarray, p: ConvParams):
    _require_4d(x, "conv input")
    if x.shape[1] != p.in_channels:
        raise ShapeError(f"conv expects {p.in_channels} input channels, got {x.shape[1]}")
    return output_hw(x.shape[2], x.shape[3], p.kernel, p.stride, p.pad)


def _conv_forward_cols(x, p):
    oh, ow = _conv_geometry(x, p)
    xp = _pad(x, p.pad)
    cols = kernels.im2col(xp, p.kernel[0], p.kernel[1], p.stride)
    wmat = p.weights.reshape(p.out_channels, -1)
    y = cols @ wmat.T
    y += p.bias
    y = y.reshape(x.shape[0], oh, ow, p.out_channels).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), cols, xp.shape


def _conv_backward_cols(grad_out, cols, padded_shape, p, need_dx=True):
    n, oc, oh, ow = grad_out.shape
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, oc)
    grad_w = (g.T @ cols).reshape(p.weights.shape)
    grad_b = g.sum(axis=0)
    if not need_dx:
        return None, grad_w, grad_b
    dcols = g @ p.weights.reshape(oc, -1)
    dxp = kernels.col2im(np.ascontiguousarray(dcols), padded_shape, p.kernel[0], p.kernel[1], p.stride)
    return np.ascontiguousarray(_unpad(dxp, p.pad)), grad_w, grad_b


def conv2d_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    return _conv_forward_cols(x, p)[0]


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, p: ConvParams):
    """Return ``(grad_x, grad_w, grad_b)`` for the convolution that produced ``grad_out``."""
    oh, ow = _conv_geometry(x, p)
    if grad_out.shape != (x.shape[0], p.out_channels, oh, ow):
        raise ShapeError(f"grad_out {grad_out.shape} does not match forward output")
    xp = _pad(x, p.pad)
    cols = kernels.im2col(xp, p.kernel[0], p.kernel[1], p.stride)
    return _conv_backward_cols(grad_out, cols, xp.shape, p)


# --------------------------------------------------------------------------
# pooling

def _pool_check(x, kernel, stride, pad):
    _require_4d(x, "pool input")
    return output_hw(x.shape[2], x.shape[3], kernel, stride, pad)


def maxpool_forward(x, kernel, stride, pad=PadSpec()):
    """Return ``(y, argmax)``; ties go to the first cell in row-major window order."""
    _pool_check(x, kernel, stride, pad)
    xp = _pad(x, pad, -np.inf)
    return kernels.max_pool(xp, kernel[0], kernel[1], stride)


def maxpool_backward(grad, argmax, x_shape, pad=PadSpec()):
    padded = (x_shape[0], x_shape[1], x_shape[2] + pad.top + pad.bottom, x_shape[3] + pad.left + pad.right)
    dxp = kernels.index_backward(np.ascontiguousarray(grad), argmax, padded)
    return np.ascontiguousarray(_unpad(dxp, pad))


def avgpool_forward(x, kernel, stride, pad=PadSpec()):
    _pool_check(x, kernel, stride, pad)
    return kernels.avg_pool(_pad(x, pad), kernel[0], kernel[1], stride)


def avgpool_backward(grad, x_shape, kernel, stride, pad=PadSpec()):
    padded = (x_shape[0], x_shape[1], x_shape[2] + pad.top + pad.bottom, x_shape[3] + pad.left + pad.right)
    dxp = kernels.avg_pool_backward(np.ascontiguousarray(grad), padded, kernel[0], kernel[1], stride)
    return np.ascontiguousarray(_unpad(dxp, pad))


def stochpool_forward(x, kernel, stride, pad=PadSpec(), train=True, rng: Rng | None = None):
    """Stochastic pooling.

    In train mode each window emits one activation sampled with probability
    proportional to its value (uniformly when the window is all zero) and the
    sampled positions are returned for the backward pass.  In eval mode the
    output is the probability-weighted mean ``sum(a^2) / sum(a)`` and the
    index map is ``None``.  Padded cells count as zero activations.
    """
    oh, ow = _pool_check(x, kernel, stride, pad)
    if train and np.any(x < 0):
        raise ValueError("stochastic pooling needs non-negative activations")
    xp = _pad(x, pad)
    if not train:
        return kernels.stoch_pool(xp, kernel[0], kernel[1], stride, None)
    if rng is None:
        raise ValueError("train-mode stochastic pooling needs an rng")
    u = rng.random((x.shape[0], x.shape[1], oh, ow))
    return kernels.stoch_pool(xp, kernel[0], kernel[1], stride, u)


def stochpool_backward(grad, sampled, x_shape, pad=PadSpec()):
    if sampled is None:
        raise ValueError("stochastic pooling backward needs the train-mode sample map")
    return maxpool_backward(grad, sampled, x_shape, pad)


# --------------------------------------------------------------------------
# local response normalization

@dataclass(frozen=True)
class LrnParams:
    n: int = 5
    alpha: float = 1e-4
    beta: float = 0.75
    k: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.n % 2 == 0:
            raise ValueError("LRN window must be odd and >= 1")
        if self.beta <= 0 or self.k <= 0:
            raise ValueError("LRN needs beta > 0 and k > 0")


def _channel_window_sum(a: np.ndarray, n: int) -> np.ndarray:
    half = n // 2
    c = a.shape[1]
    csum = np.cumsum(np.pad(a, ((0, 0), (1, 0), (0, 0), (0, 0))), axis=1)
    hi = np.minimum(np.arange(c) + half + 1, c)
    lo = np.maximum(np.arange(c) - half, 0)
    return csum[:, hi] - csum[:, lo]


def _lrn_scale(x, p: LrnParams):
    return p.k + (p.alpha / p.n) * _channel_window_sum(x * x, p.n)


def lrn_forward(x, p: LrnParams = LrnParams()):
    """``x / (k + alpha/n * sum of squares over neighbouring channels) ** beta``."""
    _require_4d(x, "lrn input")
    return x * _lrn_scale(x, p) ** -p.beta


def lrn_backward(grad, x, p: LrnParams = LrnParams()):
    if grad.shape != x.shape:
        raise ShapeError("lrn grad shape mismatch")
    scale = _lrn_scale(x, p)
    inner = _channel_window_sum(grad * x * scale ** (-p.beta - 1), p.n)
    return grad * scale ** -p.beta - (2.0 * p.alpha * p.beta / p.n) * x * inner


# --------------------------------------------------------------------------
# fully connected, activations, loss

def fc_forward(x, weights, bias):
    if x.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ShapeError(f"fc expects input (n, {weights.shape[1]}), got {x.shape}")
    return x @ weights.T + bias


def fc_backward(grad, x, weights):
    """Return ``(grad_x, grad_w, grad_b)``."""
    return grad @ weights, grad.T @ x, grad.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0, dtype=x.dtype)


def relu_backward(grad, x):
    return grad * (x > 0)


def dropout_mask(shape, rate: float, rng: Rng, dtype) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    draw_dtype = np.float32 if np.dtype(dtype) == np.float32 else np.float64
    keep = rng.random(shape, dtype=draw_dtype) >= rate
    return keep.astype(dtype) * np.asarray(1.0 / (1.0 - rate), dtype=dtype)


def dropout_forward(x, rate: float, train: bool, rng: Rng | None = None):
    """Return ``(y, mask)``; eval mode returns ``x`` itself and no mask."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    mask = dropout_mask(x.shape, rate, rng, x.dtype)
    return x * mask, mask


def dropout_backward(grad, mask):
    return grad if mask is None else grad * mask


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"need {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in 0..{k - 1}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, labels] -= 1
    grad /= n
    return loss, grad


# --------------------------------------------------------------------------
# stateful wrappers used by Network

class Layer:
    """One step of a network; parameters live in the owning network's dict."""

    param_names: tuple[str, ...] = ()

    def __init__(self, name: str):
        self.name = name
        # the network's first layer has no consumer for its input gradient
        self.need_input_grad = True

    def forward(self, x, params, train, rng):
        raise NotImplementedError

    def backward(self, grad, params, grads):
        raise NotImplementedError


class Conv2D(Layer):
    param_names = ("weight", "bias")

    def __init__(self, name, in_channels, out_channels, kernel, stride, pad):
        super().__init__(name)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.pad = kernel, stride, pad

    def _params(self, params):
        return ConvParams(self.kernel, self.stride, self.pad, self.in_channels, self.out_channels,
                          params[f"{self.name}.weight"], params[f"{self.name}.bias"])

    def forward(self, x, params, train, rng):
        p = self._params(params)
        y, self._cols, self._padded = _conv_forward_cols(x, p)
        return y

    def backward(self, grad, params, grads):
        dx, gw, gb = _conv_backward_cols(grad, self._cols, self._padded, self._params(params),
                                         self.need_input_grad)
        grads[f"{self.name}.weight"] = gw
        grads[f"{self.name}.bias"] = gb
        self._cols = None
        return dx


class Dense(Layer):
    param_names = ("weight", "bias")

    def forward(self, x, params, train, rng):
        self._shape = x.shape
        self._x = x.reshape(x.shape[0], -1)
        return fc_forward(self._x, params[f"{self.name}.weight"], params[f"{self.name}.bias"])

    def backward(self, grad, params, grads):
        dx, gw, gb = fc_backward(grad, self._x, params[f"{self.name}.weight"])
        grads[f"{self.name}.weight"] = gw
        grads[f"{self.name}.bias"] = gb
        return dx.reshape(self._shape)


class ReLU(Layer):
    def forward(self, x, params, train, rng):
        self._x = x
        return relu_forward(x)

    def backward(self, grad, params, grads):
        return relu_backward(grad, self._x)


class Dropout(Layer):
    def __init__(self, name, rate):
        super().__init__(name)
        self.rate = rate

    def forward(self, x, params, train, rng):
        y, self._mask = dropout_forward(x, self.rate, train, rng)
        return y

    def backward(self, grad, params, grads):
        return dropout_backward(grad, self._mask)


class _Pool(Layer):
    def __init__(self, name, kernel, stride, pad):
        super().__init__(name)
        self.kernel, self.stride, self.pad = kernel, stride, pad


class MaxPool(_Pool):
    def forward(self, x, params, train, rng):
        self._shape = x.shape
        y, self._idx = maxpool_forward(x, self.kernel, self.stride, self.pad)
        return y

    def backward(self, grad, params, grads):
        return maxpool_backward(grad, self._idx, self._shape, self.pad)


class AvgPool(_Pool):
    def forward(self, x, params, train, rng):
        self._shape = x.shape
        return avgpool_forward(x, self.kernel, self.stride, self.pad)

    def backward(self, grad, params, grads):
        return avgpool_backward(grad, self._shape, self.kernel, self.stride, self.pad)


class StochPool(_Pool):
    def forward(self, x, params, train, rng):
        self._shape = x.shape
        y, self._idx = stochpool_forward(x, self.kernel, self.stride, self.pad, train, rng)
        return y

    def backward(self, grad, params, grads):
        return stochpool_backward(grad, self._idx, self._shape, self.pad)


class LRN(Layer):
    def __init__(self, name, params: LrnParams):
        super().__init__(name)
        self.lrn = params

    def forward(self, x, params, train, rng):
        self._x = x
        return lrn_forward(x, self.lrn)

    def backward(self, grad, params, grads):
        return lrn_backward(grad, self._x, self.lrn)

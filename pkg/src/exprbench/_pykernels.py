"""Pure-numpy reference kernels.

Every kernel works on an input that is already padded: the caller owns the
padding policy (zeros for convolution and average pooling, -inf for max
pooling).  Index maps address the padded plane, ``idx = y * Wp + x``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(xp, kh, kw, stride):
    # (N, C, oh, ow, kh, kw) view
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def im2col(xp, kh, kw, stride):
    n, c = xp.shape[:2]
    win = _windows(xp, kh, kw, stride)
    oh, ow = win.shape[2:4]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)


def col2im(cols, padded_shape, kh, kw, stride):
    n, c, hp, wp = padded_shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    taps = np.ascontiguousarray(cols.reshape(n, oh, ow, c, kh, kw).transpose(4, 5, 0, 3, 1, 2))
    out = np.zeros(padded_shape, dtype=cols.dtype)
    # descending order matches the compiled kernel's summation order
    for i in reversed(range(kh)):
        for j in reversed(range(kw)):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += taps[i, j]
    return out


def _window_base(padded_shape, kh, kw, stride):
    """Flat padded-plane index of each window's top-left cell plus per-cell offsets."""
    hp, wp = padded_shape[2:]
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    base = (np.arange(oh)[:, None] * stride * wp + np.arange(ow)[None, :] * stride)
    rel = (np.arange(kh)[:, None] * wp + np.arange(kw)[None, :]).ravel()
    return base, rel


def max_pool(xp, kh, kw, stride):
    n, c = xp.shape[:2]
    win = _windows(xp, kh, kw, stride)
    oh, ow = win.shape[2:4]
    flat = win.reshape(n, c, oh, ow, kh * kw)
    arg = flat.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    base, rel = _window_base(xp.shape, kh, kw, stride)
    idx = base[None, None] + rel[arg]
    return np.ascontiguousarray(out), idx.astype(np.int64)


def avg_pool(xp, kh, kw, stride):
    n, c = xp.shape[:2]
    win = _windows(xp, kh, kw, stride)
    oh, ow = win.shape[2:4]
    acc = np.zeros((n, c, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            acc += win[:, :, :, :, i, j]
    return (acc / (kh * kw)).astype(xp.dtype)


def avg_pool_backward(grad, padded_shape, kh, kw, stride):
    g = (grad.astype(np.float64) / (kh * kw)).astype(grad.dtype)
    n, c, oh, ow = grad.shape
    hp, wp = padded_shape[2:]
    out = np.zeros(padded_shape, dtype=grad.dtype)
    for i in reversed(range(kh)):
        for j in reversed(range(kw)):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += g
    return out


def stoch_pool(xp, kh, kw, stride, u):
    """Sample (``u`` given) or probability-weighted average (``u is None``)."""
    n, c = xp.shape[:2]
    win = _windows(xp, kh, kw, stride)
    oh, ow = win.shape[2:4]
    k = kh * kw
    flat = win.reshape(n, c, oh, ow, k).astype(np.float64)
    cums = np.cumsum(flat, axis=-1)
    total = cums[..., -1]
    if u is None:
        sq = np.sum(flat * flat, axis=-1)
        safe = np.where(total > 0, total, 1.0)
        out = np.where(total > 0, sq / safe, 0.0)
        return out.astype(xp.dtype), None
    thresh = u * total
    hit = cums > thresh[..., None]
    arg = np.where(hit.any(axis=-1), hit.argmax(axis=-1), k - 1)
    # rounding can leave the threshold on the last cumulative value; step back to a positive cell
    last_pos = k - 1 - np.argmax((flat > 0)[..., ::-1], axis=-1)
    arg = np.where(hit.any(axis=-1), arg, last_pos)
    zero = total <= 0
    arg = np.where(zero, np.minimum((u * k).astype(np.int64), k - 1), arg)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    base, rel = _window_base(xp.shape, kh, kw, stride)
    idx = base[None, None] + rel[arg]
    return out.astype(xp.dtype), idx.astype(np.int64)


def index_backward(grad, idx, padded_shape):
    n, c, hp, wp = padded_shape
    out = np.zeros((n * c, hp * wp), dtype=grad.dtype)
    rows = np.repeat(np.arange(n * c), grad.shape[2] * grad.shape[3])
    np.add.at(out, (rows, idx.reshape(-1)), grad.reshape(-1))
    return out.reshape(padded_shape)

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same contracts as ``_pykernels``."""
import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1, ow = (wp - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n * oh * ow, c * kh * kw), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t b, y, x, ch, i, j, row, col, y0, x0
    with nogil:
        for b in range(n):
            for y in range(oh):
                y0 = y * stride
                for x in range(ow):
                    x0 = x * stride
                    row = (b * oh + y) * ow + x
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                out[row, col] = xp[b, ch, y0 + i, x0 + j]
                                col = col + 1
    return out_arr


def col2im(real[:, ::1] cols, padded_shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t n = padded_shape[0], c = padded_shape[1]
    cdef Py_ssize_t hp = padded_shape[2], wp = padded_shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1, ow = (wp - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, y, x, ch, i, j, row, col, y0, x0
    # row-major walk over cols; per output cell this adds windows in
    # descending (i, j) order, which the reference reproduces
    with nogil:
        for b in range(n):
            for y in range(oh):
                for x in range(ow):
                    row = (b * oh + y) * ow + x
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            y0 = y * stride + i
                            for j in range(kw):
                                out[b, ch, y0, x * stride + j] += cols[row, col]
                                col = col + 1
    return out_arr


def max_pool(real[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1, ow = (wp - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, oh, ow), dtype=dtype)
    idx_arr = np.empty((n, c, oh, ow), dtype=np.int64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, ch, y, x, i, j, best_i
    cdef real best, v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for x in range(ow):
                        best = xp[b, ch, y * stride, x * stride]
                        best_i = (y * stride) * wp + x * stride
                        for i in range(kh):
                            for j in range(kw):
                                v = xp[b, ch, y * stride + i, x * stride + j]
                                if v > best:
                                    best = v
                                    best_i = (y * stride + i) * wp + x * stride + j
                        out[b, ch, y, x] = best
                        idx[b, ch, y, x] = best_i
    return out_arr, idx_arr


def avg_pool(real[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1, ow = (wp - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, oh, ow), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, y, x, i, j
    cdef double acc
    cdef double area = kh * kw
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for x in range(ow):
                        acc = 0.0
                        for i in range(kh):
                            for j in range(kw):
                                acc = acc + xp[b, ch, y * stride + i, x * stride + j]
                        out[b, ch, y, x] = <real>(acc / area)
    return out_arr


def avg_pool_backward(real[:, :, :, ::1] grad, padded_shape, Py_ssize_t kh, Py_ssize_t kw,
                      Py_ssize_t stride):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], oh = grad.shape[2], ow = grad.shape[3]
    cdef Py_ssize_t hp = padded_shape[2], wp = padded_shape[3]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, y, x, i, j
    cdef real g
    cdef double area = kh * kw
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for x in range(ow):
                        g = <real>(<double>grad[b, ch, y, x] / area)
                        for i in range(kh):
                            for j in range(kw):
                                out[b, ch, y * stride + i, x * stride + j] += g
    return out_arr


def stoch_pool(real[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, u=None):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1, ow = (wp - kw) // stride + 1
    cdef Py_ssize_t k = kh * kw
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, oh, ow), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, y, x, i, j, pick, last_pos, cell
    cdef double total, sq, cum, thresh, v
    cdef double[:, :, :, ::1] uu
    cdef cnp.int64_t[:, :, :, ::1] idx
    if u is None:
        with nogil:
            for b in range(n):
                for ch in range(c):
                    for y in range(oh):
                        for x in range(ow):
                            total = 0.0
                            sq = 0.0
                            for i in range(kh):
                                for j in range(kw):
                                    v = xp[b, ch, y * stride + i, x * stride + j]
                                    total = total + v
                                    sq = sq + v * v
                            out[b, ch, y, x] = <real>(sq / total) if total > 0 else 0
        return out_arr, None

    uu = np.ascontiguousarray(u, dtype=np.float64)
    idx_arr = np.empty((n, c, oh, ow), dtype=np.int64)
    idx = idx_arr
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for x in range(ow):
                        total = 0.0
                        last_pos = k - 1
                        cell = 0
                        for i in range(kh):
                            for j in range(kw):
                                v = xp[b, ch, y * stride + i, x * stride + j]
                                total = total + v
                                if v > 0:
                                    last_pos = cell
                                cell = cell + 1
                        if total <= 0:
                            pick = <Py_ssize_t>(uu[b, ch, y, x] * k)
                            if pick > k - 1:
                                pick = k - 1
                        else:
                            thresh = uu[b, ch, y, x] * total
                            cum = 0.0
                            pick = -1
                            cell = 0
                            for i in range(kh):
                                for j in range(kw):
                                    cum = cum + <double>xp[b, ch, y * stride + i, x * stride + j]
                                    if pick < 0 and cum > thresh:
                                        pick = cell
                                    cell = cell + 1
                            if pick < 0:
                                pick = last_pos
                        i = pick // kw
                        j = pick % kw
                        out[b, ch, y, x] = xp[b, ch, y * stride + i, x * stride + j]
                        idx[b, ch, y, x] = (y * stride + i) * wp + x * stride + j
    return out_arr, idx_arr


def index_backward(real[:, :, :, ::1] grad, cnp.int64_t[:, :, :, ::1] idx, padded_shape):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], oh = grad.shape[2], ow = grad.shape[3]
    cdef Py_ssize_t hp = padded_shape[2], wp = padded_shape[3]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, hp * wp), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, y, x
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for x in range(ow):
                        out[b, ch, idx[b, ch, y, x]] += grad[b, ch, y, x]
    return out_arr.reshape((n, c, hp, wp))

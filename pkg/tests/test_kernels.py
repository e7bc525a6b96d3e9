"""The compiled kernels must agree with the numpy reference bit for bit."""
import numpy as np
import pytest

from exprbench import kernels
from exprbench import _pykernels as py

backends = kernels.available_backends()
cy = backends.get("cython")
needs_cython = pytest.mark.skipif(cy is None, reason="compiled extension not built")

CASES = [  # (n, c, hp, wp, kh, kw, stride)
    (2, 3, 7, 7, 3, 3, 1),
    (1, 2, 9, 8, 3, 3, 2),
    (3, 1, 6, 6, 2, 2, 2),
    (2, 4, 11, 11, 5, 5, 1),
    (1, 1, 5, 7, 1, 3, 2),
]


def test_backend_selection_reports_a_known_backend():
    assert kernels.BACKEND in backends
    assert kernels.im2col is backends[kernels.BACKEND].im2col


def test_im2col_layout_against_direct_loop():
    r = np.random.default_rng(0)
    x = r.normal(size=(2, 2, 5, 5))
    cols = py.im2col(x, 3, 3, 2)
    row = 0
    for i in range(2):
        for y in range(2):
            for xx in range(2):
                patch = x[i, :, 2 * y:2 * y + 3, 2 * xx:2 * xx + 3].ravel()
                assert np.array_equal(cols[row], patch)
                row += 1


def test_col2im_is_adjoint_of_im2col():
    # <im2col(x), c> == <x, col2im(c)> for every x, c
    r = np.random.default_rng(1)
    for n, c, hp, wp, kh, kw, s in CASES:
        x = r.normal(size=(n, c, hp, wp))
        cols = py.im2col(x, kh, kw, s)
        g = r.normal(size=cols.shape)
        assert np.isclose(np.sum(cols * g), np.sum(x * py.col2im(g, x.shape, kh, kw, s)))


@needs_cython
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("case", CASES)
def test_parity(case, dtype):
    n, c, hp, wp, kh, kw, s = case
    r = np.random.default_rng(hash(case) % 2**32)
    x = r.normal(size=(n, c, hp, wp)).astype(dtype)
    a = np.abs(x)

    assert np.array_equal(py.im2col(x, kh, kw, s), cy.im2col(x, kh, kw, s))
    cols = py.im2col(x, kh, kw, s)
    g = r.normal(size=cols.shape).astype(dtype)
    assert np.array_equal(py.col2im(g, x.shape, kh, kw, s), cy.col2im(g, x.shape, kh, kw, s))

    for got, want in zip(py.max_pool(x, kh, kw, s), cy.max_pool(x, kh, kw, s)):
        assert np.array_equal(got, want)
    pooled = py.avg_pool(x, kh, kw, s)
    assert np.array_equal(pooled, cy.avg_pool(x, kh, kw, s))
    gp = r.normal(size=pooled.shape).astype(dtype)
    assert np.array_equal(py.avg_pool_backward(gp, x.shape, kh, kw, s), cy.avg_pool_backward(gp, x.shape, kh, kw, s))

    u = r.random(pooled.shape)
    for got, want in zip(py.stoch_pool(a, kh, kw, s, u), cy.stoch_pool(a, kh, kw, s, u)):
        assert np.array_equal(got, want)
    # eval mode: numpy's pairwise summation may differ in the last bit
    tol = 1e-6 if dtype == np.float32 else 1e-14
    assert np.allclose(py.stoch_pool(a, kh, kw, s, None)[0], cy.stoch_pool(a, kh, kw, s, None)[0], rtol=tol, atol=0)

    _, idx = py.max_pool(x, kh, kw, s)
    assert np.array_equal(py.index_backward(gp, idx, x.shape), cy.index_backward(gp, idx, x.shape))


@needs_cython
def test_stoch_pool_zero_windows_and_rounding_edge():
    x = np.zeros((1, 1, 4, 4))
    x[0, 0, 0, 0] = 1.0
    u = np.array([[[[0.0, 0.999999], [0.5, 1.0 - 1e-17]]]])
    for impl in (py, cy):
        out, idx = impl.stoch_pool(x, 2, 2, 2, u)
        assert out[0, 0, 0, 0] == 1.0
    assert np.array_equal(py.stoch_pool(x, 2, 2, 2, u)[1], cy.stoch_pool(x, 2, 2, 2, u)[1])

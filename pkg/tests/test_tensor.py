import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exprbench import tensor as T
from exprbench.tensor import Rng

dims = st.tuples(*[st.integers(0, 4)] * 4)


def test_new_fills_and_uses_working_dtype():
    t = T.new((2, 3, 4, 5), fill=1.5)
    assert t.shape == (2, 3, 4, 5) and t.dtype == np.float32 and np.all(t == 1.5)
    with T.precision("float64"):
        assert T.new((1, 1, 1, 1)).dtype == np.float64
    assert T.default_dtype() == np.float32


def test_new_rejects_bad_shapes():
    with pytest.raises(ValueError):
        T.new((1, 2, 3))
    with pytest.raises(ValueError):
        T.new((1, -1, 2, 2))
    with pytest.raises(OverflowError):
        T._check_shape((2**40, 2**40, 1, 1))


def test_unknown_precision():
    with pytest.raises(ValueError):
        T.set_precision("float16")


@given(dims)
def test_data_length_is_product_of_dims(shape):
    t = T.new(shape)
    assert t.size == int(np.prod(shape))


@given(st.tuples(*[st.integers(1, 4)] * 4), st.data())
def test_offset_matches_row_major_layout(shape, data):
    i, j, y, x = (data.draw(st.integers(0, d - 1)) for d in shape)
    t = np.arange(np.prod(shape)).reshape(shape)
    assert t.ravel()[T.offset(shape, i, j, y, x)] == t[i, j, y, x]


def test_map_zip_reduce():
    a = np.arange(24, dtype=np.float32).reshape(1, 2, 3, 4)
    b = np.ones_like(a)
    assert np.array_equal(T.map_(lambda v: v * 2, a), a * 2)
    assert np.array_equal(T.zip_(np.add, a, b), a + 1)
    assert T.reduce_sum(a) == 276.0
    assert T.reduce_max(a) == 23.0
    assert T.reduce_sum(a, axis=(2, 3)).shape == (1, 2)
    with pytest.raises(ValueError):
        T.zip_(np.add, a, b[:, :1])


def test_random_uniform_mean_and_range():
    x = T.random_uniform((1, 1, 1000, 1000), 0.0, 1.0, Rng(0))
    assert abs(float(x.mean()) - 0.5) < 0.01
    assert x.min() >= 0.0 and x.max() < 1.0


def test_random_uniform_degenerate_and_invalid_bounds():
    x = T.random_uniform((1, 1, 2, 2), 3.0, 3.0, Rng(0))
    assert np.all(x == 3.0)
    with pytest.raises(ValueError):
        T.random_uniform((1, 1, 1, 1), 1.0, 0.0, Rng(0))


@given(st.integers(0, 2**64 - 1))
def test_same_seed_same_stream(seed):
    assert np.array_equal(Rng(seed).random(16), Rng(seed).random(16))


def test_rng_state_round_trip():
    r = Rng(5)
    r.random(3)
    state = r.get_state()
    a = r.random(10)
    r.set_state(state)
    assert np.array_equal(a, r.random(10))


def test_rng_seed_bounds():
    with pytest.raises(ValueError):
        Rng(-1)
    with pytest.raises(ValueError):
        Rng(2**64)


def test_pcg64_stream_is_pinned():
    # frozen first draws for seed 0; a change here would silently reshuffle every split
    assert Rng(0).random(3).tolist() == [0.6369616873214543, 0.2697867137638703, 0.04097352393619469]
    assert Rng(0).permutation(6).tolist() == [3, 2, 5, 4, 0, 1]

"""Dense NCHW tensors, precision control and the seeded random stream.

Tensors are plain ``numpy.ndarray`` objects of rank 4 laid out row-major as
(batch, channel, height, width), so element (i, j, y, x) lives at flat offset
``((i*c + j)*h + y)*w + x``.  The helpers here add the few checks the rest of
the engine relies on (shape agreement, size overflow, dtype policy).

Precision
---------
Production paths run in float32.  Gradient checks need float64, so the
working dtype is a process-wide switch::

    with precision("float64"):
        params = init_params(spec, rng)

Random numbers
--------------
:class:`Rng` wraps numpy's PCG64 bit generator.  PCG64 is a published,
fixed algorithm (O'Neill 2014, 128-bit LCG state with XSL-RR output), and
numpy guarantees stream stability for it across platforms and releases, so
a seed pins every validation split, dropout mask and pooling sample.
"""
from __future__ import annotations

import contextlib
import operator
from functools import reduce as _reduce
from typing import Callable, Iterator, Sequence

import numpy as np

Shape = tuple[int, int, int, int]

_DTYPES = {"float32": np.float32, "float64": np.float64}
_current = np.dtype(np.float32)


def default_dtype() -> np.dtype:
    return _current


def set_precision(name: str) -> None:
    global _current
    try:
        _current = np.dtype(_DTYPES[name])
    except KeyError:
        raise ValueError(f"unknown precision {name!r}; use float32 or float64") from None


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the working dtype."""
    global _current
    saved = _current
    set_precision(name)
    try:
        yield
    finally:
        _current = saved


class Rng:
    """Seeded deterministic random stream (PCG64).

    The stream is single-owner; spawn children with :meth:`spawn` instead of
    sharing one instance between consumers.
    """

    def __init__(self, seed: int = 0):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, size=None, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        return self._gen.uniform(lo, hi, size)

    def random(self, size=None, dtype=np.float64) -> np.ndarray:
        return self._gen.random(size, dtype=dtype)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self) -> "Rng":
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.PCG64(self._gen.integers(0, 2**63)))
        return child

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


def _check_shape(shape: Sequence[int]) -> Shape:
    if len(shape) != 4:
        raise ValueError(f"tensor shape must have 4 dims, got {tuple(shape)}")
    dims = tuple(int(d) for d in shape)
    if any(d < 0 for d in dims):
        raise ValueError(f"negative dimension in {dims}")
    size = _reduce(operator.mul, dims, 1)
    if size > np.iinfo(np.intp).max:
        raise OverflowError(f"tensor of shape {dims} overflows the flat index")
    return dims  # type: ignore[return-value]


def new(shape: Sequence[int], fill: float = 0.0, dtype=None) -> np.ndarray:
    dims = _check_shape(shape)
    return np.full(dims, fill, dtype=dtype or _current)


def offset(shape: Sequence[int], i: int, j: int, y: int, x: int) -> int:
    """Flat row-major offset of element (i, j, y, x)."""
    _, c, h, w = shape
    return ((i * c + j) * h + y) * w + x


def map_(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    return np.asarray(fn(x), dtype=x.dtype)


def zip_(fn: Callable[[np.ndarray, np.ndarray], np.ndarray], a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.asarray(fn(a, b), dtype=np.result_type(a, b))


def reduce_sum(x: np.ndarray, axis=None):
    out = np.sum(x, axis=axis, dtype=x.dtype)
    return float(out) if axis is None else out


def reduce_max(x: np.ndarray, axis=None):
    out = np.max(x, axis=axis)
    return float(out) if axis is None else out


def random_uniform(shape: Sequence[int], lo: float, hi: float, rng: Rng, dtype=None) -> np.ndarray:
    """I.i.d. samples in ``[lo, hi)`` drawn from ``rng``."""
    if lo > hi:
        raise ValueError(f"lo ({lo}) > hi ({hi})")
    dims = tuple(int(d) for d in shape)
    if any(d < 0 for d in dims):
        raise ValueError(f"negative dimension in {dims}")
    dt = np.dtype(dtype or _current)
    out = (lo + (hi - lo) * rng.random(dims)).astype(dt)
    if hi > lo:
        # float32 rounding can land exactly on hi
        np.minimum(out, np.nextafter(dt.type(hi), dt.type(lo)), out=out)
    return out

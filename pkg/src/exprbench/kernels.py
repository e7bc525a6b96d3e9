"""Hot-loop kernel backend, chosen once at import.

The compiled extension (``_ckernels``) is used when it was built; otherwise
the numpy reference (``_pykernels``) takes over.  ``EXPRBENCH_BACKEND=python``
forces the fallback, ``EXPRBENCH_BACKEND=cython`` makes a missing extension an
import error instead of a silent downgrade.
"""
import os

from . import _pykernels

_wanted = os.environ.get("EXPRBENCH_BACKEND", "auto").lower()
if _wanted not in ("auto", "python", "cython"):
    raise ImportError(f"EXPRBENCH_BACKEND must be auto, python or cython, not {_wanted!r}")

_impl = _pykernels
BACKEND = "python"
if _wanted != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        if _wanted == "cython":
            raise

im2col = _impl.im2col
col2im = _impl.col2im
max_pool = _impl.max_pool
avg_pool = _impl.avg_pool
avg_pool_backward = _impl.avg_pool_backward
stoch_pool = _impl.stoch_pool
index_backward = _impl.index_backward


def available_backends():
    """Map backend name to kernel module for every backend importable here."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out

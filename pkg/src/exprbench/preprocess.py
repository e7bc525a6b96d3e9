"""Illumination / contrast normalization of 8-bit grayscale faces.

Images are 2-D ``uint8`` numpy arrays (height, width).  Every method maps a
valid image to a new ``uint8`` image of the same size and is deterministic.
Real-valued intermediate results are turned back into gray levels with
round-half-up (``floor(v + 0.5)``) after clipping to [0, 255].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

METHODS = ("raw", "histeq", "is", "dct", "dog")


def _check(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D gray image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {img.dtype}")
    return img


def to_gray(values) -> np.ndarray:
    """Clip, round half up and convert to uint8."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 255.0)
    return np.floor(v + 0.5).astype(np.uint8)


def rescale(values, lo=None, hi=None, flat=128) -> np.ndarray:
    """Linear map of ``[lo, hi]`` (default: data range) onto [0, 255]; constant input gives ``flat``."""
    v = np.asarray(values, dtype=np.float64)
    lo = v.min() if lo is None else lo
    hi = v.max() if hi is None else hi
    if not hi > lo:
        return np.full(v.shape, flat, dtype=np.uint8)
    return to_gray((np.clip(v, lo, hi) - lo) * (255.0 / (hi - lo)))


# --------------------------------------------------------------------------
# the five methods

def raw(img) -> np.ndarray:
    return _check(img).copy()


def hist_eq(img) -> np.ndarray:
    """Global 256-bin histogram equalization.

    ``v -> round(255 * (cdf(v) - cdf_min) / (N - cdf_min))``; a constant
    image (where the formula is 0/0) is returned unchanged.
    """
    img = _check(img)
    hist = np.bincount(img.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    n = img.size
    cdf_min = cdf[np.flatnonzero(hist)[0]]
    if cdf_min == n:
        return img.copy()
    lut = to_gray(255.0 * (cdf - cdf_min) / (n - cdf_min))
    return lut[img]


def diffuse(values, lam: float, iterations: int, record=None) -> np.ndarray:
    """Explicit heat-equation smoothing with a 5-point Laplacian and replicated borders.

    ``record`` (a list) receives a copy of the field after every iteration.
    """
    if lam <= 0:
        raise ValueError("diffusion step must be positive")
    if iterations < 1:
        raise ValueError("need at least one diffusion iteration")
    u = np.asarray(values, dtype=np.float64).copy()
    for _ in range(iterations):
        p = np.pad(u, 1, mode="edge")
        lap = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * u
        u = u + lam * lap
        if record is not None:
            record.append(u.copy())
    return u


def reflectance(img, lam: float = 0.25, iterations: int = 15, eps: float = 1e-6) -> np.ndarray:
    """Image divided by its diffused luminance estimate (real-valued)."""
    i = _check(img).astype(np.float64)
    lum = diffuse(i, lam, iterations)
    return i / np.maximum(lum, eps)


def robust_rescale(values, k: float = 3.0) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    mean, std = v.mean(), v.std()
    clipped = np.clip(v, mean - k * std, mean + k * std)
    return rescale(clipped)


def isotropic_smoothing(img, lam: float = 0.25, iterations: int = 15) -> np.ndarray:
    return robust_rescale(reflectance(img, lam, iterations))


@lru_cache(maxsize=16)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; ``C @ x`` transforms a length-n column."""
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * j + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    c[0] /= math.sqrt(2.0)
    c.setflags(write=False)
    return c


def dct2(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return dct_matrix(x.shape[0]) @ x @ dct_matrix(x.shape[1]).T


def idct2(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    return dct_matrix(c.shape[0]).T @ c @ dct_matrix(c.shape[1])


@lru_cache(maxsize=16)
def zigzag_order(n: int) -> tuple[tuple[int, int], ...]:
    """JPEG-style zigzag traversal of an n x n grid, starting at (0, 0)."""
    cells = []
    for s in range(2 * n - 1):
        diag = [(i, s - i) for i in range(max(0, s - n + 1), min(s, n - 1) + 1)]
        # even diagonals run bottom-left to top-right
        cells.extend(reversed(diag) if s % 2 == 0 else diag)
    return tuple(cells)


def dct_log_normalize(log_img, discard: int = 50, target_level: float = 128.0) -> np.ndarray:
    """Reset the DC term and zero the next ``discard - 1`` zigzag coefficients of a log image."""
    n = log_img.shape[0]
    if discard < 1 or discard > n * n:
        raise ValueError(f"discard must be in 1..{n * n}")
    coeffs = dct2(log_img)
    # under orthonormal scaling a constant field c has DC = c * n
    coeffs[0, 0] = math.log1p(target_level) * n
    for r, c in zigzag_order(n)[1:discard]:
        coeffs[r, c] = 0.0
    return idct2(coeffs)


def dct_norm(img, discard: int = 50) -> np.ndarray:
    img = _check(img)
    if img.shape[0] != img.shape[1]:
        raise ValueError("DCT normalization needs a square image")
    out = dct_log_normalize(np.log1p(img.astype(np.float64)), discard)
    return to_gray(np.expm1(out))


@lru_cache(maxsize=32)
def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    k.setflags(write=False)
    return k


def gaussian_blur(values, sigma: float) -> np.ndarray:
    """Separable truncated Gaussian with replicated borders."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    k = gaussian_kernel(float(sigma))
    r = len(k) // 2
    v = np.asarray(values, dtype=np.float64)
    p = np.pad(v, ((r, r), (0, 0)), mode="edge")
    v = sum(k[i] * p[i:i + v.shape[0]] for i in range(len(k)))
    p = np.pad(v, ((0, 0), (r, r)), mode="edge")
    return sum(k[i] * p[:, i:i + v.shape[1]] for i in range(len(k)))


def dog_response(img, sigma1: float = 1.0, sigma2: float = 2.0) -> np.ndarray:
    i = _check(img).astype(np.float64)
    return gaussian_blur(i, sigma1) - gaussian_blur(i, sigma2)


def dog(img, sigma1: float = 1.0, sigma2: float = 2.0) -> np.ndarray:
    if sigma1 <= 0 or sigma2 <= 0:
        raise ValueError("sigma must be positive")
    return rescale(dog_response(img, sigma1, sigma2))


# --------------------------------------------------------------------------
# dispatch

@dataclass(frozen=True)
class PrepMethod:
    """A preprocessing method plus its parameters.

    Defaults: isotropic smoothing step 0.25 for 15 iterations, 50 discarded
    zigzag DCT coefficients, DoG sigmas 1 and 2.
    """

    name: str
    params: dict = field(default_factory=dict, hash=False, compare=True)

    DEFAULTS = {
        "raw": {},
        "histeq": {},
        "is": {"lam": 0.25, "iterations": 15},
        "dct": {"discard": 50},
        "dog": {"sigma1": 1.0, "sigma2": 2.0},
    }

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown preprocessing method {self.name!r}; choose from {', '.join(METHODS)}")
        unknown = set(self.params) - set(self.DEFAULTS[self.name])
        if unknown:
            raise ValueError(f"{self.name} does not take {sorted(unknown)}")
        merged = dict(self.DEFAULTS[self.name])
        for key, val in self.params.items():
            if isinstance(merged[key], int):
                if float(val) != int(float(val)):
                    raise ValueError(f"{self.name} {key} must be an integer, got {val}")
                val = int(float(val))
            merged[key] = type(merged[key])(val)
        object.__setattr__(self, "params", merged)
        if self.name == "is" and (merged["lam"] <= 0 or int(merged["iterations"]) < 1):
            raise ValueError("isotropic smoothing needs lam > 0 and iterations >= 1")
        if self.name == "dct" and int(merged["discard"]) < 1:
            raise ValueError("DCT discard count must be >= 1")
        if self.name == "dog" and (merged["sigma1"] <= 0 or merged["sigma2"] <= 0):
            raise ValueError("DoG sigmas must be positive")

    @classmethod
    def parse(cls, text: str) -> "PrepMethod":
        """``"dog"`` or ``"dog:sigma1=1.5,sigma2=3"``."""
        name, _, rest = text.partition(":")
        params = {}
        for item in filter(None, rest.split(",")):
            key, _, val = item.partition("=")
            try:
                params[key.strip()] = float(val)
            except ValueError:
                raise ValueError(f"bad parameter {item!r} in {text!r}") from None
        return cls(name.strip().lower(), params)


_FUNCS = {
    "raw": lambda img, p: raw(img),
    "histeq": lambda img, p: hist_eq(img),
    "is": lambda img, p: isotropic_smoothing(img, p["lam"], int(p["iterations"])),
    "dct": lambda img, p: dct_norm(img, int(p["discard"])),
    "dog": lambda img, p: dog(img, p["sigma1"], p["sigma2"]),
}


def apply(method, img) -> np.ndarray:
    if isinstance(method, str):
        method = PrepMethod.parse(method)
    return _FUNCS[method.name](img, method.params)


def standardize(batch: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Per-image zero mean / unit std network input transform for a (n, h, w) uint8 stack."""
    x = batch.astype(np.float64)
    axes = tuple(range(1, x.ndim))
    mean = x.mean(axis=axes, keepdims=True)
    std = x.std(axis=axes, keepdims=True)
    return ((x - mean) / np.maximum(std, 1e-6)).astype(dtype)

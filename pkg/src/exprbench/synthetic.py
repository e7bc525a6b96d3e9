"""Procedural 48x48 "faces" for fixtures, smoke runs and the toy benchmark.

Each of the seven classes has its own mouth shape and brow slant; every
image also gets a random shift, sensor noise and an uneven illumination
field, so the preprocessing methods have something to normalize.
"""
from __future__ import annotations

import numpy as np

from .data import FACE_SIZE, NUM_CLASSES, Dataset, Sample

# (mouth curvature, mouth openness, brow slant) per class
_CLASS_SHAPES = [
    (-0.6, 0.0, 0.5),   # angry: frown, brows down toward the nose
    (-0.3, 0.3, 0.2),   # disgust
    (0.0, 0.8, -0.4),   # fear: open mouth, raised inner brows
    (0.8, 0.2, 0.0),    # happy
    (-0.5, 0.0, -0.5),  # sad
    (0.0, 1.0, -0.8),   # surprise
    (0.0, 0.0, 0.0),    # neutral
]


def face(label: int, rng: np.random.Generator, size: int = FACE_SIZE,
         illumination: float = 0.6, noise: float = 6.0) -> np.ndarray:
    curve, opening, slant = _CLASS_SHAPES[label]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    dx, dy = rng.uniform(-0.04, 0.04, 2)
    x, y = xx - 0.5 - dx, yy - 0.5 - dy

    img = np.full((size, size), 70.0)
    skin = (x / 0.36) ** 2 + (y / 0.46) ** 2 < 1.0
    img[skin] = 170.0
    for ex in (-0.17, 0.17):
        eye = ((x - ex) / 0.07) ** 2 + ((y + 0.1) / 0.04) ** 2 < 1.0
        img[eye] = 40.0
        # inner end of each brow moves by the slant
        t = np.clip((x - ex) / 0.1, -1, 1)
        inner = -t * np.sign(ex)
        brow_y = -0.2 + 0.04 * slant * inner
        brow = (np.abs(x - ex) < 0.1) & (np.abs(y - brow_y) < 0.02)
        img[brow] = 50.0
    mx = x / 0.16
    mouth_y = 0.22 - 0.08 * curve * (1 - mx ** 2)
    half_open = 0.015 + 0.05 * opening * np.sqrt(np.clip(1 - mx ** 2, 0, 1))
    mouth = (np.abs(mx) < 1) & (np.abs(y - mouth_y) < half_open)
    img[mouth] = 30.0

    gain = 1.0 + illumination * rng.uniform(-0.5, 0.3)
    ramp = illumination * 60.0 * rng.uniform(-1, 1) * (xx - 0.5) + illumination * 40.0 * rng.uniform(-1, 1) * (yy - 0.5)
    img = img * gain + ramp + rng.normal(0.0, noise, img.shape)
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def toy_dataset(n: int = 64, seed: int = 0, name: str = "toy", **kw) -> Dataset:
    """``n`` faces with labels cycling through the classes (balanced to within one)."""
    rng = np.random.default_rng(seed)
    samples = [Sample(face(i % NUM_CLASSES, rng, **kw), i % NUM_CLASSES, f"{name}-{i:05d}") for i in range(n)]
    return Dataset(name, samples)


def fer_csv_text(n: int = 21, seed: int = 0, usages=("Training", "PublicTest", "PrivateTest")) -> str:
    """FER-2013 formatted CSV of synthetic faces, usages assigned round-robin."""
    ds = toy_dataset(n, seed)
    lines = ["emotion,pixels,Usage"]
    for i, s in enumerate(ds.samples):
        lines.append(f"{s.label},{' '.join(map(str, s.image.ravel()))},{usages[i % len(usages)]}")
    return "\n".join(lines) + "\n"

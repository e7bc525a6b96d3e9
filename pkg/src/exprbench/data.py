"""Dataset ingestion, eye-based registration, crop/flip augmentation and splits."""
from __future__ import annotations

import csv
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError
from .preprocess import to_gray
from .tensor import Rng

log = logging.getLogger(__name__)

CLASS_NAMES = ("angry", "disgust", "fear", "happy", "sad", "surprise", "neutral")
NUM_CLASSES = len(CLASS_NAMES)
FACE_SIZE = 48
CROP_SIZE = 42
FER_PIXELS = FACE_SIZE * FACE_SIZE

# (row, col) of the top-left corner of each 42x42 window inside the 48x48 face
CROP_OFFSETS = {
    "center": (3, 3),
    "tl": (0, 0),
    "tr": (0, 6),
    "bl": (6, 0),
    "br": (6, 6),
}
CROP_TAGS = tuple(CROP_OFFSETS) + tuple(f"{pos}-flip" for pos in CROP_OFFSETS)

# canonical eye geometry in the 48x48 registered face
EYE_DISTANCE = 0.4 * FACE_SIZE
EYE_CENTER = (FACE_SIZE / 2.0, 0.4 * FACE_SIZE)  # (x, y)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".ppm", ".tif", ".tiff", ".gif"}


@dataclass(frozen=True)
class Landmarks:
    left_eye: tuple[float, float]
    right_eye: tuple[float, float]

    def canonical(self) -> "Landmarks":
        (lx, ly), (rx, ry) = self.left_eye, self.right_eye
        if (lx, ly) == (rx, ry):
            raise DataError("eye landmarks coincide")
        if rx < lx:
            return Landmarks(self.right_eye, self.left_eye)
        return self


@dataclass
class Sample:
    image: np.ndarray
    label: int
    source_id: str
    crop_tag: str = "original"
    usage: str | None = None
    landmarks: Landmarks | None = None
    registered: bool = True

    def __post_init__(self):
        if not 0 <= int(self.label) < NUM_CLASSES:
            raise DataError(f"{self.source_id}: label {self.label} outside 0..{NUM_CLASSES - 1}")


@dataclass
class Dataset:
    name: str
    samples: list[Sample] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def class_histogram(self) -> list[int]:
        counts = Counter(s.label for s in self.samples)
        return [counts.get(k, 0) for k in range(NUM_CLASSES)]

    def subset(self, samples: Iterable[Sample], name: str | None = None) -> "Dataset":
        return Dataset(name or self.name, list(samples))

    def with_usage(self, *usages: str) -> "Dataset":
        wanted = {u.lower() for u in usages}
        return self.subset(s for s in self.samples if (s.usage or "").lower() in wanted)

    def exclude(self, source_ids: Iterable[str]) -> "Dataset":
        drop = set(source_ids)
        return self.subset(s for s in self.samples if s.source_id not in drop)

    def images(self) -> np.ndarray:
        return np.stack([s.image for s in self.samples]) if self.samples else np.zeros((0, 0, 0), np.uint8)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


# --------------------------------------------------------------------------
# ingestion

def load_fer_csv(path, strict: bool = True, name: str = "fer2013") -> Dataset:
    """Read a FER-2013 style CSV (``emotion,pixels,Usage``).

    With ``strict`` the first malformed row raises :class:`DataError`; otherwise
    bad rows are collected in ``Dataset.errors`` as ``(row_number, message)``
    so that ``len(samples) + len(errors)`` equals the number of data rows.
    Row numbers count data rows from 1, excluding the header.
    """
    ds = Dataset(name)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        cols = [h.strip().lower() for h in header]
        try:
            i_emo, i_pix = cols.index("emotion"), cols.index("pixels")
        except ValueError:
            raise DataError(f"{path}: header must contain emotion and pixels columns") from None
        i_use = cols.index("usage") if "usage" in cols else None
        for row_no, row in enumerate(reader, 1):
            if not row:
                continue
            try:
                ds.samples.append(_fer_row(row, row_no, i_emo, i_pix, i_use))
            except DataError as exc:
                if strict:
                    raise
                ds.errors.append((row_no, str(exc)))
    return ds


def _fer_row(row, row_no, i_emo, i_pix, i_use) -> Sample:
    try:
        emotion = int(row[i_emo])
        values = [int(v) for v in row[i_pix].split()]
    except (IndexError, ValueError):
        raise DataError(f"row {row_no}: malformed") from None
    if not 0 <= emotion < NUM_CLASSES:
        raise DataError(f"row {row_no}: emotion {emotion} outside 0..6")
    if len(values) != FER_PIXELS:
        raise DataError(f"row {row_no}: expected {FER_PIXELS} pixels, got {len(values)}")
    pixels = np.array(values, dtype=np.int64)
    if pixels.min() < 0 or pixels.max() > 255:
        raise DataError(f"row {row_no}: pixel value outside 0..255")
    usage = row[i_use].strip() if i_use is not None and i_use < len(row) else None
    return Sample(pixels.astype(np.uint8).reshape(FACE_SIZE, FACE_SIZE), emotion, f"row{row_no}", usage=usage)


def read_landmarks(path) -> dict[str, Landmarks]:
    """Sidecar CSV ``filename,lx,ly,rx,ry`` (header optional)."""
    out: dict[str, Landmarks] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for line_no, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].strip().startswith("#"):
                continue
            if line_no == 1 and row[0].strip().lower() == "filename":
                continue
            if len(row) != 5:
                raise DataError(f"{path}:{line_no}: expected filename,lx,ly,rx,ry")
            fname = row[0].strip().replace("\\", "/")
            if fname in out:
                raise DataError(f"{path}:{line_no}: duplicate entry for {fname}")
            try:
                lx, ly, rx, ry = (float(v) for v in row[1:])
            except ValueError:
                raise DataError(f"{path}:{line_no}: non-numeric coordinate") from None
            out[fname] = Landmarks((lx, ly), (rx, ry))
    return out


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def write_pgm(path, img: np.ndarray) -> None:
    """Binary (P5) portable graymap."""
    Image.fromarray(np.ascontiguousarray(img, dtype=np.uint8), mode="L").save(path, format="PPM")


def _resize(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape == (size, size):
        return img
    return np.asarray(Image.fromarray(img, mode="L").resize((size, size), Image.BILINEAR), dtype=np.uint8)


def load_image_dir(root, landmarks_file=None, name: str | None = None, register_faces: bool = True) -> Dataset:
    """Load ``root/<class name>/<image>`` into 48x48 samples.

    When a landmark sidecar is given, entries are joined by path relative to
    ``root`` (``happy/001.png``) or by bare filename when that is unique.
    Images with landmarks are registered; the rest are assumed pre-aligned,
    resized to 48x48 and flagged ``registered=False``.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    marks = read_landmarks(landmarks_file) if landmarks_file else {}
    ds = Dataset(name or root.name)
    files: list[tuple[str, Path, int]] = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        cls = sub.name.lower()
        if cls not in CLASS_NAMES:
            raise DataError(f"unknown class directory {sub.name!r}; expected one of {', '.join(CLASS_NAMES)}")
        for f in sorted(sub.rglob("*")):
            if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES:
                files.append((f.relative_to(root).as_posix(), f, CLASS_NAMES.index(cls)))

    rel_names = {rel for rel, _, _ in files}
    base_counts = Counter(os.path.basename(rel) for rel in rel_names)
    by_base = {os.path.basename(rel): rel for rel in rel_names if base_counts[os.path.basename(rel)] == 1}
    joined: dict[str, Landmarks] = {}
    for key, lm in marks.items():
        rel = key if key in rel_names else by_base.get(key)
        if rel is None:
            raise DataError(f"landmark entry {key!r} names no image under {root}")
        if rel in joined:
            raise DataError(f"two landmark entries resolve to {rel}")
        joined[rel] = lm

    for rel, path, label in files:
        img = read_image(path)
        lm = joined.get(rel)
        if lm is not None and register_faces:
            face, registered = register(img, lm), True
        else:
            face, registered = _resize(img, FACE_SIZE), False
        ds.samples.append(Sample(face, label, rel, landmarks=lm, registered=registered))
    return ds


def load_any(path, **kw) -> Dataset:
    """A FER-style CSV file or a class-directory tree."""
    p = Path(path)
    if p.is_dir():
        return load_image_dir(p, **kw)
    return load_fer_csv(p, **{k: v for k, v in kw.items() if k in ("strict", "name")})


def read_exclusions(path) -> set[str]:
    """One source_id per line; blank lines and ``#`` comments ignored."""
    with open(path, encoding="utf-8") as fh:
        return {ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")}


# --------------------------------------------------------------------------
# registration

def registration_matrix(lm: Landmarks, size: int = FACE_SIZE) -> np.ndarray:
    """2x3 affine mapping input (x, y) to registered output coordinates."""
    lm = lm.canonical()
    (lx, ly), (rx, ry) = lm.left_eye, lm.right_eye
    dx, dy = rx - lx, ry - ly
    dist = math.hypot(dx, dy)
    angle = math.atan2(dy, dx)
    scale = (EYE_DISTANCE * size / FACE_SIZE) / dist
    cos, sin = math.cos(-angle) * scale, math.sin(-angle) * scale
    mx, my = (lx + rx) / 2.0, (ly + ry) / 2.0
    tx, ty = EYE_CENTER[0] * size / FACE_SIZE, EYE_CENTER[1] * size / FACE_SIZE
    return np.array([
        [cos, -sin, tx - (cos * mx - sin * my)],
        [sin, cos, ty - (sin * mx + cos * my)],
    ])


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` at real coordinates with replicated borders."""
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xs).astype(np.int64), w - 2) if w > 1 else np.zeros(xs.shape, np.int64)
    y0 = np.minimum(np.floor(ys).astype(np.int64), h - 2) if h > 1 else np.zeros(ys.shape, np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = xs - x0, ys - y0
    f = img.astype(np.float64)
    top = f[y0, x0] * (1 - fx) + f[y0, x1] * fx
    bot = f[y1, x0] * (1 - fx) + f[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def register(img: np.ndarray, lm: Landmarks, size: int = FACE_SIZE) -> np.ndarray:
    """Rotate the eye line horizontal and place the eyes at the canonical positions."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise DataError("registration needs a 2-D gray image")
    fwd = registration_matrix(lm, size)
    inv = np.linalg.inv(np.vstack([fwd, [0.0, 0.0, 1.0]]))[:2]
    v, u = np.mgrid[0:size, 0:size].astype(np.float64)
    xs = inv[0, 0] * u + inv[0, 1] * v + inv[0, 2]
    ys = inv[1, 0] * u + inv[1, 1] * v + inv[1, 2]
    return to_gray(bilinear_sample(img, xs, ys))


# --------------------------------------------------------------------------
# augmentation and splitting

def crop(img: np.ndarray, tag: str) -> np.ndarray:
    pos, _, flip = tag.partition("-")
    r, c = CROP_OFFSETS[pos]
    out = img[r:r + CROP_SIZE, c:c + CROP_SIZE]
    return out[:, ::-1] if flip else out


def augment(sample: Sample) -> list[Sample]:
    """Five 42x42 crops of a 48x48 face, each plain and mirrored."""
    if sample.image.shape != (FACE_SIZE, FACE_SIZE):
        raise DataError(f"{sample.source_id}: augmentation needs a {FACE_SIZE}x{FACE_SIZE} image, got {sample.image.shape}")
    return [replace(sample, image=crop(sample.image, tag), crop_tag=tag) for tag in CROP_TAGS]


def augment_dataset(ds: Dataset) -> Dataset:
    out = Dataset(ds.name)
    for s in ds.samples:
        out.samples.extend(augment(s))
    return out


def group_by_source(samples: Iterable[Sample]) -> dict[str, list[Sample]]:
    groups: dict[str, list[Sample]] = {}
    for s in samples:
        groups.setdefault(s.source_id, []).append(s)
    return groups


def split_indices(source_ids, fraction: float, rng: Rng, by: str = "source") -> tuple[np.ndarray, np.ndarray]:
    """Index form of :func:`epoch_split`: ``(train_idx, val_idx)`` in input order."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("validation fraction must lie in (0, 1)")
    if by == "source":
        groups: dict[str, list[int]] = {}
        for i, sid in enumerate(source_ids):
            groups.setdefault(sid, []).append(i)
        units = list(groups.values())
    elif by == "crop":
        units = [[i] for i in range(len(source_ids))]
    else:
        raise ValueError(f"split-by must be 'source' or 'crop', not {by!r}")
    n_val = int(math.floor(fraction * len(units) + 0.5))
    if n_val < 1 or n_val >= len(units):
        raise DataError(f"{len(units)} {by} units cannot give non-empty train and validation sides")
    is_val = np.zeros(len(source_ids), dtype=bool)
    for u in rng.permutation(len(units))[:n_val]:
        is_val[units[u]] = True
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


def epoch_split(ds: Dataset, fraction: float, rng: Rng, by: str = "source") -> tuple[Dataset, Dataset]:
    """Random train/validation partition; ``by="source"`` keeps sibling crops together."""
    train_idx, val_idx = split_indices([s.source_id for s in ds.samples], fraction, rng, by)
    return (
        Dataset(ds.name + ":train", [ds.samples[i] for i in train_idx]),
        Dataset(ds.name + ":val", [ds.samples[i] for i in val_idx]),
    )


def ensure_crops(ds: Dataset) -> Dataset:
    """Augment 48x48 originals; pass already-cropped datasets through."""
    if all(s.crop_tag != "original" for s in ds.samples):
        return ds
    if any(s.crop_tag != "original" for s in ds.samples):
        raise DataError(f"{ds.name}: mixes original faces and crops")
    return augment_dataset(ds)

import math
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from exprbench import data as D
from exprbench.data import Landmarks, Sample
from exprbench.errors import DataError
from exprbench.synthetic import fer_csv_text, toy_dataset
from exprbench.tensor import Rng
from conftest import write_class_dir

faces = arrays(np.uint8, (48, 48))


def _fer_line(label, pixels, usage="Training"):
    return f"{label},{' '.join(map(str, pixels))},{usage}"


# ---------------------------------------------------------------- FER CSV

def test_single_zero_row(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("emotion,pixels,Usage\n" + _fer_line(4, [0] * 2304) + "\n")
    ds = D.load_fer_csv(p)
    assert len(ds) == 1
    s = ds.samples[0]
    assert s.label == 4 and s.usage == "Training" and s.image.shape == (48, 48) and not s.image.any()
    assert ds.class_histogram == [0, 0, 0, 0, 1, 0, 0]


def test_short_row_names_the_row(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("emotion,pixels,Usage\n" + _fer_line(1, [5] * 2304) + "\n" + _fer_line(1, [5] * 2303) + "\n")
    with pytest.raises(DataError, match="row 2"):
        D.load_fer_csv(p)


@pytest.mark.parametrize("line, msg", [
    (_fer_line(7, [0] * 2304), "emotion"),
    (_fer_line(0, [0] * 2303 + [256]), "pixel value"),
    ("x," + " ".join(["0"] * 2304) + ",Training", "malformed"),
])
def test_row_validation(tmp_path, line, msg):
    p = tmp_path / "bad.csv"
    p.write_text("emotion,pixels,Usage\n" + line + "\n")
    with pytest.raises(DataError, match=msg):
        D.load_fer_csv(p)


def test_lenient_mode_conserves_row_count(tmp_path):
    good = [_fer_line(i % 7, [i] * 2304) for i in range(5)]
    bad = [_fer_line(9, [0] * 2304), _fer_line(0, [0] * 10), "garbage"]
    lines = good[:2] + bad[:1] + good[2:4] + bad[1:] + good[4:]
    p = tmp_path / "mixed.csv"
    p.write_text("emotion,pixels,Usage\n" + "\n".join(lines) + "\n")
    ds = D.load_fer_csv(p, strict=False)
    assert len(ds.samples) + len(ds.errors) == len(lines)
    assert [row for row, _ in ds.errors] == [3, 6, 7]


def test_usage_partition(fer_csv):
    ds = D.load_fer_csv(fer_csv)
    assert len(ds) == 42
    parts = [ds.with_usage(u) for u in ("Training", "PublicTest", "PrivateTest")]
    assert [len(p) for p in parts] == [14, 14, 14]
    assert sum(ds.class_histogram) == len(ds)


def test_missing_file_and_header(tmp_path):
    with pytest.raises(DataError):
        D.load_fer_csv(tmp_path / "nope.csv")
    p = tmp_path / "h.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(DataError, match="header"):
        D.load_fer_csv(p)


@pytest.mark.skipif("FER2013_CSV" not in os.environ, reason="set FER2013_CSV to the canonical fer2013.csv")
def test_canonical_fer2013_counts():
    ds = D.load_fer_csv(os.environ["FER2013_CSV"])
    assert len(ds) == 35887
    assert [len(ds.with_usage(u)) for u in ("Training", "PublicTest", "PrivateTest")] == [28709, 3589, 3589]


# ---------------------------------------------------------------- image directories

def test_seven_class_dirs_one_image_each(tmp_path):
    root = write_class_dir(tmp_path / "d", n=7)
    ds = D.load_image_dir(root)
    assert len(ds) == 7 and ds.class_histogram == [1] * 7
    assert all(not s.registered and s.landmarks is None for s in ds.samples)


def test_unknown_class_dir(tmp_path):
    root = write_class_dir(tmp_path / "d", n=7)
    (root / "contempt").mkdir()
    with pytest.raises(DataError, match="contempt"):
        D.load_image_dir(root)


def test_unreadable_image(tmp_path):
    root = write_class_dir(tmp_path / "d", n=7)
    (root / "happy" / "broken.png").write_bytes(b"not an image")
    with pytest.raises(DataError, match="broken.png"):
        D.load_image_dir(root)


def _sidecar(path, rows):
    path.write_text("filename,lx,ly,rx,ry\n" + "".join(f"{r}\n" for r in rows))
    return path


def test_landmarks_join_by_filename_and_optional(tmp_path):
    root = write_class_dir(tmp_path / "d", n=7)
    happy = next((root / "happy").iterdir())
    side = _sidecar(tmp_path / "eyes.csv", [f"{happy.name},14.4,19.2,33.6,19.2"])
    ds = D.load_image_dir(root, side)
    flagged = {s.source_id: s.registered for s in ds.samples}
    assert flagged.pop(f"happy/{happy.name}") is True
    assert not any(flagged.values())


def test_duplicate_sidecar_entry(tmp_path):
    root = write_class_dir(tmp_path / "d", n=7)
    name = next((root / "sad").iterdir()).name
    side = _sidecar(tmp_path / "eyes.csv", [f"{name},1,1,5,1", f"{name},2,2,6,2"])
    with pytest.raises(DataError, match="duplicate"):
        D.load_image_dir(root, side)


def test_sidecar_referencing_missing_file(tmp_path):
    root = write_class_dir(tmp_path / "d", n=7)
    side = _sidecar(tmp_path / "eyes.csv", ["ghost.png,1,1,5,1"])
    with pytest.raises(DataError, match="ghost"):
        D.load_image_dir(root, side)


def test_exclusion_list(tmp_path, fer_csv):
    ds = D.load_fer_csv(fer_csv)
    ex = tmp_path / "ex.txt"
    ex.write_text("# bad detections\nrow1\n\nrow5\n")
    ids = D.read_exclusions(ex)
    assert ids == {"row1", "row5"}
    assert len(ds.exclude(ids)) == 40


# ---------------------------------------------------------------- registration

CANON = Landmarks((24 - 9.6, 19.2), (24 + 9.6, 19.2))


def test_canonical_landmarks_give_identity(rng):
    img = rng.integers(0, 256, (48, 48)).astype(np.uint8)
    out = D.register(img, CANON)
    assert np.max(np.abs(out.astype(int) - img)) <= 1


def _rotate(pt, center, deg):
    a = math.radians(deg)
    x, y = pt[0] - center[0], pt[1] - center[1]
    return (center[0] + x * math.cos(a) - y * math.sin(a), center[1] + x * math.sin(a) + y * math.cos(a))


def test_rotated_eyes_map_to_horizontal_line():
    c = (60.0, 50.0)
    lm = Landmarks(_rotate((40.0, 50.0), c, 10), _rotate((80.0, 50.0), c, 10))
    m = D.registration_matrix(lm)
    mapped = [m @ np.array([*p, 1.0]) for p in (lm.left_eye, lm.right_eye)]
    assert abs(mapped[0][1] - mapped[1][1]) < 0.5
    assert mapped[0] == pytest.approx([14.4, 19.2]) and mapped[1] == pytest.approx([33.6, 19.2])


def test_rotated_eye_blobs_redetected_horizontal():
    # draw two dark eyes on a bright 120x100 canvas, rotated by 10 degrees
    c = (60.0, 50.0)
    eyes = [_rotate((40.0, 50.0), c, 10), _rotate((80.0, 50.0), c, 10)]
    yy, xx = np.mgrid[0:100, 0:120]
    img = np.full((100, 120), 220.0)
    for ex, ey in eyes:
        img -= 200.0 * np.exp(-((xx - ex) ** 2 + (yy - ey) ** 2) / (2 * 3.0 ** 2))
    out = 255.0 - D.register(np.clip(img, 0, 255).astype(np.uint8), Landmarks(*eyes)).astype(np.float64)
    out[out < 60] = 0
    centroids = []
    for half in (slice(0, 24), slice(24, 48)):
        w = out[:, half]
        ys, xs = np.mgrid[0:48, half]
        centroids.append(((w * xs).sum() / w.sum(), (w * ys).sum() / w.sum()))
    assert abs(centroids[0][1] - centroids[1][1]) < 0.5
    assert centroids[0][1] == pytest.approx(19.2, abs=0.5)


def test_coincident_eyes():
    with pytest.raises(DataError):
        D.register(np.zeros((48, 48), np.uint8), Landmarks((10, 10), (10, 10)))


def test_landmark_canonicalization():
    lm = Landmarks((30, 5), (10, 5)).canonical()
    assert lm.left_eye == (10, 5) and lm.right_eye == (30, 5)


@given(arrays(np.uint8, (30, 40)), st.floats(-20, 20), st.floats(8, 30))
def test_register_is_deterministic_and_in_range(img, angle, dist):
    c = (20.0, 15.0)
    lm = Landmarks(_rotate((c[0] - dist / 2, c[1]), c, angle), _rotate((c[0] + dist / 2, c[1]), c, angle))
    a = D.register(img, lm)
    assert a.dtype == np.uint8 and a.shape == (48, 48)
    assert np.array_equal(a, D.register(img, lm))
    assert a.min() >= img.min() and a.max() <= img.max()


# ---------------------------------------------------------------- augmentation

def _sample(img, sid="s"):
    return Sample(img, 3, sid)


@given(faces)
def test_augment_gives_ten_distinct_tagged_subsets(img):
    kids = D.augment(_sample(img))
    assert len(kids) == 10
    assert sorted(k.crop_tag for k in kids) == sorted(D.CROP_TAGS)
    assert {k.source_id for k in kids} == {"s"} and {k.label for k in kids} == {3}
    for k in kids:
        pos, _, flip = k.crop_tag.partition("-")
        r, c = D.CROP_OFFSETS[pos]
        window = img[r:r + 42, c:c + 42]
        assert k.image.shape == (42, 42)
        assert np.array_equal(k.image, window[:, ::-1] if flip else window)


def test_crop_offsets():
    assert D.CROP_OFFSETS == {"center": (3, 3), "tl": (0, 0), "tr": (0, 6), "bl": (6, 0), "br": (6, 6)}


@given(faces)
def test_flip_is_involution(img):
    assert np.array_equal(img[:, ::-1][:, ::-1], img)
    center = D.crop(img, "center")
    assert np.array_equal(D.crop(img, "center-flip")[:, ::-1], center)


def test_symmetric_face_flip_equals_plain(rng):
    half = rng.integers(0, 256, (48, 24)).astype(np.uint8)
    img = np.hstack([half, half[:, ::-1]])
    assert np.array_equal(D.crop(img, "center-flip"), D.crop(img, "center"))


def test_augment_rejects_wrong_size():
    with pytest.raises(DataError):
        D.augment(_sample(np.zeros((42, 42), np.uint8)))


@given(st.integers(0, 60))
def test_augment_dataset_count(n):
    ds = toy_dataset(n, seed=n)
    assert len(D.augment_dataset(ds)) == 10 * n


def test_ensure_crops():
    ds = toy_dataset(3)
    crops = D.ensure_crops(ds)
    assert len(crops) == 30 and D.ensure_crops(crops) is crops
    with pytest.raises(DataError):
        D.ensure_crops(ds.subset(ds.samples + crops.samples[:1]))


# ---------------------------------------------------------------- splitting

def test_split_100_sources():
    ds = D.augment_dataset(toy_dataset(100))
    train, val = D.epoch_split(ds, 0.1, Rng(0))
    assert len(val) == 100 and len(train) == 900
    assert len({s.source_id for s in val}) == 10
    assert not {s.source_id for s in val} & {s.source_id for s in train}


def test_split_by_crop_reading():
    ds = D.augment_dataset(toy_dataset(10))
    train, val = D.epoch_split(ds, 0.1, Rng(0), by="crop")
    assert len(val) == 10 and len(train) == 90


def test_split_determinism_and_fresh_draws():
    ids = [f"s{i // 10}" for i in range(300)]
    a = D.split_indices(ids, 0.1, Rng(4))
    b = D.split_indices(ids, 0.1, Rng(4))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    r = Rng(4)
    first, second = D.split_indices(ids, 0.1, r), D.split_indices(ids, 0.1, r)
    assert not np.array_equal(first[1], second[1])


@given(st.lists(st.integers(0, 30), min_size=2, max_size=200), st.floats(0.05, 0.95), st.integers(0, 2**32))
def test_split_is_a_grouped_partition(groups, fraction, seed):
    ids = [f"g{g}" for g in groups]
    units = len(set(ids))
    n_val = math.floor(fraction * units + 0.5)
    if n_val < 1 or n_val >= units:
        with pytest.raises(DataError):
            D.split_indices(ids, fraction, Rng(seed))
        return
    tr, va = D.split_indices(ids, fraction, Rng(seed))
    assert sorted(np.concatenate([tr, va]).tolist()) == list(range(len(ids)))
    assert not {ids[i] for i in tr} & {ids[i] for i in va}
    assert len({ids[i] for i in va}) == n_val


def test_split_errors():
    with pytest.raises(ValueError):
        D.split_indices(["a", "b"], 0.0, Rng(0))
    with pytest.raises(DataError):
        D.split_indices(["a"], 0.5, Rng(0))


def test_label_validation():
    with pytest.raises(DataError):
        Sample(np.zeros((48, 48), np.uint8), 7, "x")


def test_synthetic_csv_round_trip(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(fer_csv_text(7, seed=1))
    ds = D.load_fer_csv(p)
    ref = toy_dataset(7, seed=1)
    assert all(np.array_equal(a.image, b.image) for a, b in zip(ds.samples, ref.samples))


def test_pgm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (48, 48)).astype(np.uint8)
    D.write_pgm(tmp_path / "a.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5")
    assert np.array_equal(D.read_image(tmp_path / "a.pgm"), img)

"""Minibatch SGD training, epoch selection, checkpoints and evaluation."""
from __future__ import annotations

import contextlib
import copy
import csv
import json
import logging
import math
import os
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import architectures as arch
from .data import NUM_CLASSES, Dataset, ensure_crops, split_indices
from .errors import CheckpointError, TrainingError
from .layers import softmax_xent
from .preprocess import standardize
from .tensor import Rng, precision

log = logging.getLogger(__name__)

EVAL_MODES = ("ten_crop_mean", "center_crop", "per_crop")


@dataclass
class TrainConfig:
    batch_size: int = 50
    momentum: float = 0.9
    lr: float = 0.005
    weight_decay: float = 1e-5
    max_epochs: int = 80
    val_fraction: float = 0.1
    seed: int = 0
    eval_mode: str = "ten_crop_mean"
    split_by: str = "source"
    precision: str = "float32"
    deterministic: bool = False
    # stop as soon as the running train-mode accuracy of an epoch reaches this
    target_train_accuracy: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.eval_mode not in EVAL_MODES:
            raise ValueError(f"eval_mode must be one of {EVAL_MODES}")
        if self.split_by not in ("source", "crop"):
            raise ValueError("split_by must be source or crop")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    train_accuracy: float = float("nan")


@dataclass
class Checkpoint:
    architecture: str
    arch_text: str
    epoch: int
    params: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def spec(self) -> arch.ArchitectureSpec:
        return arch.parse_text(self.arch_text)


@dataclass
class TrainResult:
    best: Checkpoint
    history: list[EpochRecord]
    last: Checkpoint

    @property
    def selected_epoch(self) -> int:
        return self.best.epoch

    def __iter__(self):
        # unpacks as (best, history)
        return iter((self.best, self.history))


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


# --------------------------------------------------------------------------
# optimizer

def sgd_step(params, grads, velocity, cfg: TrainConfig) -> None:
    """In-place momentum SGD with coupled L2 decay on every parameter.

    ``v <- momentum*v - lr*(g + weight_decay*w)``; ``w <- w + v``.
    """
    for name, w in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}")
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(w)
        step = g + cfg.weight_decay * w if cfg.weight_decay else g
        v *= cfg.momentum
        v -= cfg.lr * step
        w += v


# --------------------------------------------------------------------------
# checkpoint file format
#
#   "EXPB" | u16 version | u32 meta length | meta JSON (utf-8)
#   u32 record count | records | u32 CRC-32 of everything before it
#   record: u16 name length | name | u8 dtype (0 = f32, 1 = f64) | u8 ndim
#           | u32 dims[ndim] | little-endian values
# All integers little-endian.

MAGIC = b"EXPB"
VERSION = 1
_DT_CODE = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DT = {v: k for k, v in _DT_CODE.items()}


def _record(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DT_CODE:
        raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
    raw = name.encode("utf-8")
    head = struct.pack(f"<H{len(raw)}sBB{arr.ndim}I", len(raw), raw, _DT_CODE[dt], arr.ndim, *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=dt).tobytes()


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    meta = {
        "architecture": ckpt.architecture,
        "arch_text": ckpt.arch_text,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
    }
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    records = [(n, a) for n, a in ckpt.params.items()] + [(f"velocity:{n}", a) for n, a in ckpt.velocity.items()]
    body = bytearray(MAGIC + struct.pack("<HI", VERSION, len(meta_raw)) + meta_raw)
    body += struct.pack("<I", len(records))
    for name, arr in records:
        body += _record(name, arr)
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    return bytes(body)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    os.replace(tmp, path)


def parse_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < 14 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if zlib.crc32(blob[:-4]) != struct.unpack("<I", blob[-4:])[0]:
        raise CheckpointError("checksum mismatch: file is corrupt or truncated")
    version, meta_len = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    pos = 10
    try:
        meta = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        params, velocity = {}, {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", blob, pos)
            pos += 2
            dims = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            dt = _CODE_DT[code]
            size = math.prod(dims) * dt.itemsize
            arr = np.frombuffer(blob, dtype=dt, count=math.prod(dims), offset=pos).reshape(dims)
            pos += size
            arr = arr.astype(dt.newbyteorder("="))
            if name.startswith("velocity:"):
                velocity[name[len("velocity:"):]] = arr
            else:
                params[name] = arr
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if pos != len(blob) - 4:
        raise CheckpointError("malformed checkpoint: trailing bytes")
    return Checkpoint(meta["architecture"], meta["arch_text"], meta["epoch"], params, velocity,
                      meta.get("rng_state"), meta.get("extra", {}))


def load_checkpoint(path, expect: arch.ArchitectureSpec | None = None) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    ckpt = parse_checkpoint(blob)
    if expect is not None:
        check_architecture(ckpt, expect)
    return ckpt


def check_architecture(ckpt: Checkpoint, spec: arch.ArchitectureSpec) -> None:
    want = arch.param_shapes(spec)
    have = {k: tuple(v.shape) for k, v in ckpt.params.items()}
    if ckpt.architecture != spec.name or want != have:
        raise CheckpointError(f"architecture mismatch: checkpoint holds {ckpt.architecture!r}, expected {spec.name!r}")


# --------------------------------------------------------------------------
# models and evaluation

class Model:
    """An architecture bound to parameter values, for inference."""

    def __init__(self, spec: arch.ArchitectureSpec, params: dict[str, np.ndarray]):
        self.spec = spec
        self.params = params
        self.net = arch.build_network(spec)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Model":
        spec = ckpt.spec
        check_architecture(ckpt, spec)
        return cls(spec, ckpt.params)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def predict_proba(self, images: np.ndarray, batch_size: int = 200) -> np.ndarray:
        """Class probabilities for a (n, h, w) uint8 stack, eval mode."""
        x = standardize(images, self.dtype)[:, None]
        return self.net.predict_proba(x, self.params, batch_size)


def _as_model(model) -> Model:
    if isinstance(model, Model):
        return model
    if isinstance(model, Checkpoint):
        return Model.from_checkpoint(model)
    raise TypeError("evaluate needs a Model or Checkpoint")


def evaluate(model, test_ds: Dataset, eval_mode: str = "ten_crop_mean") -> EvalResult:
    """Accuracy and confusion matrix (rows = true class) in eval mode.

    ``ten_crop_mean`` averages softmax outputs over every crop of a source
    image, ``center_crop`` scores the center crop only, ``per_crop`` scores
    each crop independently.
    """
    if eval_mode not in EVAL_MODES:
        raise ValueError(f"eval_mode must be one of {EVAL_MODES}")
    model = _as_model(model)
    crops = ensure_crops(test_ds)
    samples = crops.samples
    if eval_mode == "center_crop":
        samples = [s for s in samples if s.crop_tag == "center"]
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    if not samples:
        return EvalResult(float("nan"), confusion)
    labels = np.array([s.label for s in samples])
    if labels.min() < 0 or labels.max() >= NUM_CLASSES:
        raise ValueError("class id out of range")
    probs = model.predict_proba(np.stack([s.image for s in samples]))
    if eval_mode == "ten_crop_mean":
        groups: dict[str, list[int]] = {}
        for i, s in enumerate(samples):
            groups.setdefault(s.source_id, []).append(i)
        idx = list(groups.values())
        probs = np.stack([probs[g].mean(axis=0) for g in idx])
        labels = np.array([labels[g[0]] for g in idx])
    pred = probs.argmax(axis=1)
    np.add.at(confusion, (labels, pred), 1)
    return EvalResult(float(np.trace(confusion) / confusion.sum()), confusion)


# --------------------------------------------------------------------------
# training

LOG_HEADER = ("epoch", "train_loss", "val_acc")


def _write_log(path: Path, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for r in history:
            w.writerow([r.epoch, repr(float(r.train_loss)), repr(float(r.val_accuracy))])


def train(ds: Dataset, spec: arch.ArchitectureSpec, cfg: TrainConfig, out_dir=None, resume: bool = True,
          metadata: dict | None = None) -> TrainResult:
    """Train ``spec`` on ``ds`` and select the epoch with the best validation accuracy.

    ``ds`` holds 48x48 faces or their crops.  Each epoch draws a fresh
    validation split, runs one shuffled pass of train-mode minibatch SGD and
    scores the held-out part in eval mode.  Ties in validation accuracy keep
    the earlier epoch.  With ``out_dir`` the run writes ``log.csv`` and
    ``checkpoints/{last,best}.ckpt`` there and resumes from ``last.ckpt``.
    ``metadata`` is stored in every checkpoint's ``extra`` block.
    """
    crops = ensure_crops(ds)
    if not crops.samples:
        raise TrainingError("training set is empty")
    images = np.stack([s.image for s in crops.samples])
    labels = np.array([s.label for s in crops.samples], dtype=np.int64)
    sources = [s.source_id for s in crops.samples]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)

    limits = threadpool_limits(1) if cfg.deterministic else contextlib.nullcontext()
    with limits, precision(cfg.precision):
        return _train_loop(crops, images, labels, sources, spec, cfg, out, resume, dict(metadata or {}))


def _train_loop(crops, images, labels, sources, spec, cfg, out, resume, meta):
    net = arch.build_network(spec)
    arch_text = spec.to_text()
    rng = Rng(cfg.seed)
    params = arch.init_params(spec, rng, dtype=cfg.dtype)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    history: list[EpochRecord] = []
    best: Checkpoint | None = None
    start = 1

    ckpt_dir = out / "checkpoints" if out else None
    last_path = ckpt_dir / "last.ckpt" if out else None
    if resume and last_path is not None and last_path.exists():
        last = load_checkpoint(last_path, expect=spec)
        if last.extra.get("config") != _config_key(cfg):
            raise TrainingError(f"{last_path} was written with a different training configuration")
        params = {k: v.copy() for k, v in last.params.items()}
        velocity = {k: v.copy() for k, v in last.velocity.items()}
        rng.set_state(last.rng_state)
        history = [EpochRecord(**r) for r in last.extra["history"]]
        best = load_checkpoint(ckpt_dir / "best.ckpt", expect=spec)
        start = last.epoch + 1
        log.info("resuming %s at epoch %d", spec.name, start)

    best_acc = max((r.val_accuracy for r in history), default=-1.0)
    stopped = bool(history) and _reached_target(history[-1], cfg)
    for epoch in range(start, cfg.max_epochs + 1):
        if stopped:
            break
        train_idx, val_idx = split_indices(sources, cfg.val_fraction, rng, cfg.split_by)
        order = train_idx[rng.permutation(len(train_idx))]
        loss_sum, correct = 0.0, 0
        for b in range(0, len(order), cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            x = standardize(images[idx], cfg.dtype)[:, None]
            logits = net.forward(x, params, train=True, rng=rng)
            loss, grad = softmax_xent(logits, labels[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            grads = net.backward(grad, params)
            sgd_step(params, grads, velocity, cfg)
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())

        val = crops.subset([crops.samples[i] for i in val_idx])
        val_acc = evaluate(Model(spec, params), val, cfg.eval_mode).accuracy
        rec = EpochRecord(epoch, loss_sum / len(order), val_acc, correct / len(order))
        history.append(rec)
        log.info("%s epoch %d: loss %.4f train_acc %.4f val_acc %.4f",
                 spec.name, epoch, rec.train_loss, rec.train_accuracy, rec.val_accuracy)

        if val_acc > best_acc:
            best_acc = val_acc
            best = Checkpoint(spec.name, arch_text, epoch, copy.deepcopy(params), extra=dict(meta))
            if out is not None:
                save_checkpoint(best, ckpt_dir / "best.ckpt")
        last = Checkpoint(spec.name, arch_text, epoch, params, velocity, rng.get_state(),
                          {**meta, "history": [asdict(r) for r in history], "config": _config_key(cfg)})
        if out is not None:
            save_checkpoint(last, last_path)
            _write_log(out / "log.csv", history)
        stopped = _reached_target(rec, cfg)

    if best is None:
        raise TrainingError("no epoch was trained")
    final = Checkpoint(spec.name, arch_text, history[-1].epoch, copy.deepcopy(params),
                       copy.deepcopy(velocity), rng.get_state(),
                       {**meta, "history": [asdict(r) for r in history], "config": _config_key(cfg)})
    return TrainResult(best, history, final)


def _reached_target(rec: EpochRecord, cfg: TrainConfig) -> bool:
    return cfg.target_train_accuracy is not None and rec.train_accuracy >= cfg.target_train_accuracy


def _config_key(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    # budget and stopping knobs may change between resumed runs
    for k in ("max_epochs", "deterministic", "target_train_accuracy"):
        d.pop(k)
    return d

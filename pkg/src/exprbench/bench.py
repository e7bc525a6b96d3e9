"""Experiment matrix runner and accuracy reports.

Plan files
----------
A plan is a flat ``key = value`` text file.  Blank lines and lines starting
with ``#`` are ignored; list values are comma separated::

    architectures = tang, yu, kahou, imagenet
    methods = raw, histeq, is, dct, dog
    train = fer2013.csv, sfew_train/
    test.fer2013 = fer2013.csv
    test.jaffe = jaffe/
    landmarks.jaffe = jaffe_eyes.csv
    out_dir = runs/full
    max_epochs = 80
    seed = 0

Keys:

``architectures``, ``methods``
    builtin names or architecture files; preprocessing methods may carry
    parameters (``dog:sigma1=1.5``).
``train``
    training sources, FER-style CSV files or class-directory trees.
``test.<name>``
    one test set per key; ``<name>`` is the column label in the report.
``landmarks.<name>``
    eye-landmark sidecar for an image-directory source (``<name>`` is a test
    name, or the directory's own name for training sources).
``train_usage``, ``test_usage``
    which CSV ``Usage`` values feed training (default ``Training, PublicTest``)
    and testing (default ``PrivateTest``).  Image directories are used whole.
``exclude``
    file of source ids removed from the training pool.
``out_dir``
    output root.  Each (method, architecture) cell writes
    ``<out_dir>/<method>/<arch>/{checkpoints/, log.csv, report.csv}``.
any :class:`~exprbench.trainer.TrainConfig` field
    ``batch_size``, ``lr``, ``max_epochs``, ``seed`` and so on.

Relative paths are resolved against the plan file's directory by
:func:`load_plan`.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import re
import traceback
from dataclasses import dataclass, field
from pathlib import Path

from . import architectures as arch
from . import preprocess as prep
from .data import Dataset, load_any, read_exclusions
from .errors import PlanError
from .trainer import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

REPORT_HEADER = ("method", "architecture", "test_set", "accuracy", "selected_epoch")
SUMMARY_HEADER = ("method", "architecture", "average_accuracy", "selected_epoch")

_LIST_KEYS = ("architectures", "methods", "train", "train_usage", "test_usage")
_CFG_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


@dataclass
class ExperimentPlan:
    architectures: list[str]
    methods: list[str]
    train_sets: list[str]
    test_sets: dict[str, str]
    cfg: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs"
    landmarks: dict[str, str] = field(default_factory=dict)
    train_usage: list[str] = field(default_factory=lambda: ["Training", "PublicTest"])
    test_usage: list[str] = field(default_factory=lambda: ["PrivateTest"])
    exclude: str | None = None

    def __post_init__(self):
        if not self.architectures:
            raise PlanError("plan lists no architectures")
        if not self.methods:
            raise PlanError("plan lists no preprocessing methods")
        if not self.train_sets:
            raise PlanError("plan lists no training sources")
        if not self.test_sets:
            raise PlanError("plan lists no test sets")
        for m in self.methods:
            try:
                prep.PrepMethod.parse(m)
            except ValueError as exc:
                raise PlanError(f"plan: {exc}") from None

    def validate(self) -> None:
        """Check that every architecture resolves and every path is readable."""
        for a in self.architectures:
            arch.load(a)
        paths = list(self.train_sets) + list(self.test_sets.values()) + list(self.landmarks.values())
        if self.exclude:
            paths.append(self.exclude)
        for p in paths:
            if not Path(p).exists():
                raise PlanError(f"path not found: {p}")


@dataclass(frozen=True)
class ReportRow:
    method: str
    architecture: str
    test_set: str
    accuracy: float
    selected_epoch: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")


# --------------------------------------------------------------------------
# plan files

def _split_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _coerce(name: str, raw: str):
    kind = _CFG_FIELDS[name].type
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    if kind in ("bool", bool):
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if "float" in str(kind):  # optional float
        return None if raw.lower() in ("", "none") else float(raw)
    return raw


def parse_plan(text: str, base_dir=None) -> ExperimentPlan:
    """Parse plan text; relative paths are joined to ``base_dir`` when given."""
    def path(p: str) -> str:
        if base_dir is None or Path(p).is_absolute():
            return p
        return str(Path(base_dir) / p)

    lists: dict[str, list[str]] = {}
    tests: dict[str, str] = {}
    marks: dict[str, str] = {}
    cfg_kw: dict = {}
    out_dir, exclude = "runs", None
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise PlanError(f"plan line {line_no}: expected key = value")
        try:
            if key in _LIST_KEYS:
                lists[key] = _split_list(value)
            elif key.startswith("test."):
                tests[key[5:]] = path(value)
            elif key.startswith("landmarks."):
                marks[key[10:]] = path(value)
            elif key == "out_dir":
                out_dir = path(value)
            elif key == "exclude":
                exclude = path(value) if value else None
            elif key in _CFG_FIELDS:
                cfg_kw[key] = _coerce(key, value)
            else:
                raise PlanError(f"plan line {line_no}: unknown key {key!r}")
        except PlanError:
            raise
        except ValueError as exc:
            raise PlanError(f"plan line {line_no}: {exc}") from None
    try:
        cfg = TrainConfig(**cfg_kw)
    except ValueError as exc:
        raise PlanError(f"plan: {exc}") from None
    kw = {}
    if "train_usage" in lists:
        kw["train_usage"] = lists["train_usage"]
    if "test_usage" in lists:
        kw["test_usage"] = lists["test_usage"]
    return ExperimentPlan(
        architectures=[a if a.lower() in arch.BUILTINS else path(a) for a in lists.get("architectures", [])],
        methods=lists.get("methods", []),
        train_sets=[path(p) for p in lists.get("train", [])],
        test_sets=tests,
        cfg=cfg,
        out_dir=out_dir,
        landmarks=marks,
        exclude=exclude,
        **kw,
    )


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_plan(plan: ExperimentPlan) -> str:
    lines = [
        f"architectures = {', '.join(plan.architectures)}",
        f"methods = {', '.join(plan.methods)}",
        f"train = {', '.join(plan.train_sets)}",
        f"train_usage = {', '.join(plan.train_usage)}",
        f"test_usage = {', '.join(plan.test_usage)}",
    ]
    lines += [f"test.{k} = {v}" for k, v in plan.test_sets.items()]
    lines += [f"landmarks.{k} = {v}" for k, v in plan.landmarks.items()]
    lines.append(f"out_dir = {plan.out_dir}")
    if plan.exclude:
        lines.append(f"exclude = {plan.exclude}")
    for name, value in dataclasses.asdict(plan.cfg).items():
        lines.append(f"{name} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def load_plan(path) -> ExperimentPlan:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PlanError(f"cannot read plan {path}: {exc}") from exc
    return parse_plan(text, base_dir=path.parent)


# --------------------------------------------------------------------------
# reports

def normalize_name(name: str) -> str:
    """Report label for a test set: lower case, letters and digits only."""
    return re.sub(r"[^a-z0-9]+", "", name.lower())


def averages(rows: list[ReportRow]) -> list[tuple[str, str, float, int]]:
    """Mean accuracy over test sets for each (method, architecture) cell, in row order."""
    cells: dict[tuple[str, str], list[ReportRow]] = {}
    for r in rows:
        cells.setdefault((r.method, r.architecture), []).append(r)
    return [(m, a, sum(r.accuracy for r in rs) / len(rs), rs[0].selected_epoch) for (m, a), rs in cells.items()]


def _csv_text(rows: list[ReportRow]) -> str:
    lines = [",".join(REPORT_HEADER)]
    for r in rows:
        lines.append(f"{r.method},{r.architecture},{normalize_name(r.test_set)},{r.accuracy:.4f},{r.selected_epoch}")
    return "\n".join(lines) + "\n"


def _text_table(rows: list[ReportRow]) -> str:
    methods = list(dict.fromkeys(r.method for r in rows))
    archs = list(dict.fromkeys(r.architecture for r in rows))
    tests = list(dict.fromkeys(normalize_name(r.test_set) for r in rows))
    cell = {(r.method, r.architecture, normalize_name(r.test_set)): r for r in rows}
    avg = {(m, a): (v, e) for m, a, v, e in averages(rows)}

    first = max(len("Avg."), *(len(t) for t in tests), *(len(m) for m in methods))
    width = max(9, *(len(a) for a in archs))
    rule = "-" * (first + 2 + (width + 2) * len(archs))
    out = [f"{'':<{first}}  " + "  ".join(f"{a:>{width}}" for a in archs), rule]
    for m in methods:
        out.append(m)
        for t in tests:
            vals = []
            for a in archs:
                r = cell.get((m, a, t))
                vals.append(f"{100 * r.accuracy:>{width}.2f}" if r else f"{'-':>{width}}")
            out.append(f"{t:<{first}}  " + "  ".join(vals))
        vals = []
        for a in archs:
            if (m, a) in avg:
                v, e = avg[(m, a)]
                vals.append(f"{f'{100 * v:.2f} ({e})':>{width}}")
            else:
                vals.append(f"{'-':>{width}}")
        out.append(f"{'Avg.':<{first}}  " + "  ".join(vals))
        out.append(rule)
    out.append("Accuracy in percent; Avg. is the mean over test sets, selected epoch in parentheses.")
    return "\n".join(out) + "\n"


def emit_report(rows: list[ReportRow], fmt: str = "csv", path=None) -> str:
    """Render rows as ``csv`` or aligned ``text``; also write to ``path`` when given."""
    if not rows:
        raise ValueError("no report rows to emit")
    if fmt == "csv":
        text = _csv_text(rows)
    elif fmt in ("text", "aligned-text"):
        text = _text_table(rows)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_report(path) -> list[ReportRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [ReportRow(r["method"], r["architecture"], r["test_set"], float(r["accuracy"]), int(r["selected_epoch"]))
                for r in csv.DictReader(fh)]


def emit_summary(rows: list[ReportRow], path=None) -> str:
    lines = [",".join(SUMMARY_HEADER)]
    lines += [f"{m},{a},{v:.4f},{e}" for m, a, v, e in averages(rows)]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


# --------------------------------------------------------------------------
# matrix

def cell_dir(plan: ExperimentPlan, method: str, architecture: str) -> Path:
    safe = lambda s: re.sub(r"[^A-Za-z0-9_.=-]+", "_", s)
    return Path(plan.out_dir) / safe(method) / safe(Path(architecture).stem if Path(architecture).suffix else architecture)


def load_source(path: str, name: str | None, usages: list[str], landmarks: dict[str, str]) -> Dataset:
    p = Path(path)
    if p.is_dir():
        key = name or p.name
        return load_any(p, landmarks_file=landmarks.get(key), name=key)
    ds = load_any(p, name=name or p.stem)
    if any(s.usage is not None for s in ds.samples):
        ds = ds.with_usage(*usages)
    return ds


def load_training_pool(plan: ExperimentPlan) -> Dataset:
    pool = Dataset("train")
    for path in plan.train_sets:
        ds = load_source(path, None, plan.train_usage, plan.landmarks)
        tag = Path(path).stem
        for s in ds.samples:
            # keep ids unique across sources
            pool.samples.append(dataclasses.replace(s, source_id=f"{tag}/{s.source_id}"))
    if plan.exclude:
        pool = pool.exclude(read_exclusions(plan.exclude))
    if not pool.samples:
        raise PlanError("training pool is empty")
    return pool


def load_test_sets(plan: ExperimentPlan) -> dict[str, Dataset]:
    return {name: load_source(path, name, plan.test_usage, plan.landmarks) for name, path in plan.test_sets.items()}


def preprocessed(ds: Dataset, method: prep.PrepMethod) -> Dataset:
    return ds.subset([dataclasses.replace(s, image=prep.apply(method, s.image)) for s in ds.samples])


def run_cell(plan: ExperimentPlan, method: str, architecture: str, train_ds: Dataset,
             tests: dict[str, Dataset]) -> list[ReportRow]:
    """Train one (method, architecture) model and score it on every test set."""
    out = cell_dir(plan, method, architecture)
    report = out / "report.csv"
    if report.exists():
        log.info("%s/%s: reusing %s", method, architecture, report)
        return read_report(report)
    spec = arch.load(architecture)
    result = train(train_ds, spec, plan.cfg, out_dir=out, metadata={"method": method})
    best = result.best
    rows = [ReportRow(method, spec.name, name, evaluate(best, ds, plan.cfg.eval_mode).accuracy, best.epoch)
            for name, ds in tests.items()]
    emit_report(rows, "csv", report)
    # hand back exactly what a later rerun would read
    return read_report(report)


def run_matrix(plan: ExperimentPlan) -> tuple[list[ReportRow], dict[tuple[str, str], str]]:
    """Run every (method, architecture) cell; return report rows and per-cell failures.

    Completed cells (those with a ``report.csv``) are reused, so an
    interrupted run picks up where it stopped.  A failing cell is logged,
    its traceback saved as ``error.txt`` in the cell directory, and the
    remaining cells still run.
    """
    plan.validate()
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pool = load_training_pool(plan)
    raw_tests = load_test_sets(plan)
    rows: list[ReportRow] = []
    failures: dict[tuple[str, str], str] = {}
    for m in plan.methods:
        method = prep.PrepMethod.parse(m)
        cache: dict[str, object] = {}

        def data():
            # preprocess lazily: fully reused methods never touch the images
            if not cache:
                cache["train"] = preprocessed(pool, method)
                cache["tests"] = {k: preprocessed(v, method) for k, v in raw_tests.items()}
            return cache["train"], cache["tests"]

        for a in plan.architectures:
            cdir = cell_dir(plan, m, a)
            try:
                if (cdir / "report.csv").exists():
                    rows += read_report(cdir / "report.csv")
                    continue
                train_ds, tests = data()
                rows += run_cell(plan, m, a, train_ds, tests)
                (cdir / "error.txt").unlink(missing_ok=True)
            except Exception as exc:  # one broken cell must not stop the matrix
                failures[(m, a)] = f"{type(exc).__name__}: {exc}"
                log.error("cell %s/%s failed: %s", m, a, failures[(m, a)])
                cdir.mkdir(parents=True, exist_ok=True)
                (cdir / "error.txt").write_text(traceback.format_exc(), encoding="utf-8")
    if rows:
        emit_report(rows, "csv", out / "report.csv")
        emit_report(rows, "text", out / "report.txt")
        emit_summary(rows, out / "summary.csv")
    return rows, failures


__all__ = [
    "ExperimentPlan", "ReportRow", "parse_plan", "emit_plan", "load_plan", "emit_report", "read_report",
    "emit_summary", "averages", "normalize_name", "run_matrix", "run_cell", "cell_dir",
]

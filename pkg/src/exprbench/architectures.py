"""Network descriptions: text grammar, the four builtin nets, shape inference, init.

Architecture text format, one layer per line (``#`` starts a comment)::

    name tang
    conv 5x5 s1 p2 c32        # kernel, stride, padding, output channels
    maxp 3x3 s2 p1*           # '*' pads the top and left edges only
    avgp 3x3 s2 p1
    stochp 3x3 s2 p0
    lrn n5 a0.0001 b0.75 k1   # all LRN fields optional
    fc 3072
    out 7                     # final fully-connected layer + softmax

Every ``conv`` and ``fc`` line expands into the layer, a ReLU and a dropout
layer.  Dropout defaults to 0.25 after convolutions and 0.5 after hidden
fully-connected layers; append ``d<rate>`` to override (``d0`` removes it).
Bare ``relu`` and ``dropout <rate>`` lines are accepted for custom nets.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import layers as L
from .errors import ArchitectureError, ShapeError
from .layers import LrnParams, PadSpec
from .tensor import Rng, default_dtype, random_uniform

KINDS = ("conv", "fc", "relu", "dropout", "maxp", "avgp", "stochp", "lrn", "softmax")
POOLS = ("maxp", "avgp", "stochp")
CONV_DROPOUT = 0.25
FC_DROPOUT = 0.5


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: tuple[int, int] | None = None
    stride: int | None = None
    pad: PadSpec | None = None
    out_channels: int | None = None
    units: int | None = None
    rate: float | None = None
    lrn: LrnParams | None = None
    line: int = 0  # 1-based position among the layer lines of the source text

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArchitectureError(f"unknown layer kind {self.kind!r}")
        windowed = self.kind == "conv" or self.kind in POOLS
        need = {
            "kernel": windowed,
            "stride": windowed,
            "pad": windowed,
            "out_channels": self.kind == "conv",
            "units": self.kind == "fc",
            "rate": self.kind == "dropout",
            "lrn": self.kind == "lrn",
        }
        for attr, required in need.items():
            present = getattr(self, attr) is not None
            if present != required:
                state = "requires" if required else "does not take"
                raise ArchitectureError(f"{self.kind} layer {state} field {attr!r}")


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int] = (1, 42, 42)
    classes: int = 7

    def __post_init__(self):
        shapes = infer_shapes(self)
        if not self.layers or self.layers[-1].kind != "softmax":
            raise ArchitectureError(f"{self.name}: last layer must be the softmax output")
        if shapes[-1] != (self.classes, 1, 1):
            raise ArchitectureError(f"{self.name}: network ends in {shapes[-1]}, expected {self.classes} logits")

    def to_text(self) -> str:
        return emit_text(self)


# --------------------------------------------------------------------------
# text grammar

_WINDOW = re.compile(r"^(\d+)x(\d+)$")


def _pad_token(tok: str) -> PadSpec:
    m = re.fullmatch(r"p(\d+)(\*?)", tok)
    if not m:
        raise ArchitectureError(f"bad padding token {tok!r}")
    p = int(m.group(1))
    return PadSpec.top_left(p) if m.group(2) else PadSpec.symmetric(p)


def _pad_text(pad: PadSpec) -> str:
    if pad == PadSpec.symmetric(pad.top):
        return f"p{pad.top}"
    if pad == PadSpec.top_left(pad.top):
        return f"p{pad.top}*"
    raise ArchitectureError(f"padding {pad} has no text form")


def _options(tokens, allowed: str, where: str) -> dict[str, str]:
    out = {}
    for tok in tokens:
        key, val = tok[0], tok[1:]
        if key not in allowed or key in out or not val:
            raise ArchitectureError(f"{where}: unexpected token {tok!r}")
        out[key] = val
    return out


def parse_text(text: str, name: str | None = None) -> ArchitectureSpec:
    specs: list[LayerSpec] = []
    input_shape = (1, 42, 42)
    line_no = 0
    for raw_no, raw in enumerate(text.splitlines(), 1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        head, rest = tokens[0].lower(), tokens[1:]
        where = f"line {raw_no}"
        try:
            if head == "name":
                name = name or " ".join(rest)
                continue
            if head == "input":
                dims = tuple(int(v) for v in rest[0].split("x"))
                if len(dims) != 3:
                    raise ValueError
                input_shape = dims
                continue
            line_no += 1
            if head == "conv" or head in POOLS:
                m = _WINDOW.match(rest[0])
                if not m:
                    raise ArchitectureError(f"{where}: bad kernel {rest[0]!r}")
                kernel = (int(m.group(1)), int(m.group(2)))
                pad = PadSpec()
                opts = {}
                for tok in rest[1:]:
                    if tok.startswith("p"):
                        pad = _pad_token(tok)
                    else:
                        opts.update(_options([tok], "scd", where))
                stride = int(opts.get("s", 1))
                if head == "conv":
                    if "c" not in opts:
                        raise ArchitectureError(f"{where}: conv needs c<channels>")
                    specs.append(LayerSpec("conv", kernel, stride, pad, out_channels=int(opts["c"]), line=line_no))
                    _block_tail(specs, float(opts.get("d", CONV_DROPOUT)), line_no)
                else:
                    if set(opts) - {"s"}:
                        raise ArchitectureError(f"{where}: pooling takes only stride and padding")
                    specs.append(LayerSpec(head, kernel, stride, pad, line=line_no))
            elif head == "fc":
                opts = _options(rest[1:], "d", where)
                specs.append(LayerSpec("fc", units=int(rest[0]), line=line_no))
                _block_tail(specs, float(opts.get("d", FC_DROPOUT)), line_no)
            elif head == "out":
                if len(rest) != 1:
                    raise ArchitectureError(f"{where}: out takes the class count only")
                specs.append(LayerSpec("fc", units=int(rest[0]), line=line_no))
                specs.append(LayerSpec("softmax", line=line_no))
            elif head == "lrn":
                opts = _options(rest, "nabk", where)
                lrn = LrnParams(
                    n=int(opts.get("n", 5)),
                    alpha=float(opts.get("a", 1e-4)),
                    beta=float(opts.get("b", 0.75)),
                    k=float(opts.get("k", 1.0)),
                )
                specs.append(LayerSpec("lrn", lrn=lrn, line=line_no))
            elif head == "relu":
                specs.append(LayerSpec("relu", line=line_no))
            elif head == "dropout":
                specs.append(LayerSpec("dropout", rate=float(rest[0]), line=line_no))
            else:
                raise ArchitectureError(f"{where}: unknown layer {head!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ArchitectureError):
                raise
            raise ArchitectureError(f"{where}: cannot parse {raw.strip()!r}") from exc
    if not name:
        raise ArchitectureError("architecture has no name")
    classes = specs[-2].units if len(specs) >= 2 and specs[-1].kind == "softmax" else 0
    try:
        return ArchitectureSpec(name, tuple(specs), input_shape, classes or 7)
    except ShapeError as exc:
        raise ArchitectureError(f"{name}: {exc}") from exc


def _block_tail(specs, rate, line_no):
    specs.append(LayerSpec("relu", line=line_no))
    if rate > 0:
        specs.append(LayerSpec("dropout", rate=rate, line=line_no))


def emit_text(spec: ArchitectureSpec) -> str:
    lines = [f"name {spec.name}"]
    if spec.input_shape != (1, 42, 42):
        lines.append("input " + "x".join(str(d) for d in spec.input_shape))
    layers = list(spec.layers)
    i = 0
    while i < len(layers):
        ls = layers[i]
        tail = layers[i + 1:i + 3]
        if ls.kind in ("conv", "fc") and tail and tail[0].kind == "relu":
            rate = tail[1].rate if len(tail) > 1 and tail[1].kind == "dropout" else 0.0
            default = CONV_DROPOUT if ls.kind == "conv" else FC_DROPOUT
            suffix = "" if rate == default else f" d{rate:g}"
            if ls.kind == "conv":
                lines.append(f"conv {ls.kernel[0]}x{ls.kernel[1]} s{ls.stride} {_pad_text(ls.pad)} c{ls.out_channels}{suffix}")
            else:
                lines.append(f"fc {ls.units}{suffix}")
            i += 2 if rate == 0.0 else 3
            continue
        if ls.kind == "fc" and i + 1 < len(layers) and layers[i + 1].kind == "softmax":
            lines.append(f"out {ls.units}")
            i += 2
            continue
        if ls.kind in POOLS:
            lines.append(f"{ls.kind} {ls.kernel[0]}x{ls.kernel[1]} s{ls.stride} {_pad_text(ls.pad)}")
        elif ls.kind == "lrn":
            p = ls.lrn
            lines.append(f"lrn n{p.n} a{p.alpha:g} b{p.beta:g} k{p.k:g}")
        elif ls.kind == "relu":
            lines.append("relu")
        elif ls.kind == "dropout":
            lines.append(f"dropout {ls.rate:g}")
        else:
            raise ArchitectureError(f"cannot emit layer {ls}")
        i += 1
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# builtins

BUILTIN_TEXT = {
    "tang": """
        name tang
        conv 5x5 s1 p2 c32
        maxp 3x3 s2 p1
        conv 4x4 s1 p1 c32
        maxp 3x3 s2 p1
        conv 5x5 s1 p2 c32
        maxp 3x3 s2 p1*
        fc 3072
        out 7
    """,
    "yu": """
        name yu
        conv 5x5 s1 p2 c48
        stochp 3x3 s2 p1
        conv 3x3 s1 p1 c48
        conv 3x3 s1 p1 c64
        stochp 3x3 s2 p1
        conv 3x3 s1 p1 c128
        conv 3x3 s1 p1 c128
        stochp 3x3 s2 p0
        fc 1024
        fc 1024
        out 7
    """,
    "kahou": """
        name kahou
        conv 5x5 s1 p2 c64
        maxp 3x3 s2 p0
        lrn
        conv 3x3 s1 p1 c64
        avgp 3x3 s2 p1
        lrn
        conv 3x3 s1 p1 c128
        avgp 3x3 s2 p1*
        fc 3072
        out 7
    """,
    "imagenet": """
        name imagenet
        conv 5x5 s1 p2 c32
        maxp 3x3 s2 p0
        lrn
        conv 3x3 s1 p1 c96
        maxp 3x3 s2 p1
        lrn
        conv 3x3 s1 p1 c128
        conv 3x3 s1 p1 c128
        conv 3x3 s1 p1 c96
        maxp 3x3 s2 p1*
        conv 5x5 s1 p0 c1024
        fc 1024
        out 7
    """,
}
BUILTINS = tuple(BUILTIN_TEXT)

# Map sizes as listed in the reference layout table, one cell per column;
# a missing trailing cell is None.  Used only to audit the derived shapes.
TABLE_MAPS = {
    "tang": ["42@32", "21@32", "20@32", "10@32", "42@32", "42@32", "1@3072", "1@7"],
    "yu": ["42@48", "21@48", "21@48", "11@64", "11@128", "11@128", "5@128", "1@1024", "1@1024", "1@7", None],
    "kahou": ["42@64", "21@64", "21@64", "20@64", "10@64", "10@128", "5@128", "1@3072", "1@7", None],
    "imagenet": ["42@32", "20@32", "20@32", "20@96", "10@96", "10@96", "10@128", "10@128", "10@96",
                 "5@96", "1@1024", "1@1024", "1@7"],
}


def builtin(name: str) -> ArchitectureSpec:
    key = name.lower()
    if key not in BUILTIN_TEXT:
        raise ArchitectureError(f"unknown architecture {name!r}; builtins are {', '.join(BUILTINS)}")
    return parse_text(BUILTIN_TEXT[key])


def load(name_or_path: str) -> ArchitectureSpec:
    """A builtin by name, or a spec file on disk."""
    if name_or_path.lower() in BUILTIN_TEXT:
        return builtin(name_or_path)
    try:
        with open(name_or_path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ArchitectureError(f"{name_or_path!r} is neither a builtin nor a readable spec file") from exc
    return parse_text(text)


# --------------------------------------------------------------------------
# shapes

def infer_shapes(spec: ArchitectureSpec) -> list[tuple[int, int, int]]:
    """Output (channels, height, width) after every layer; fc outputs are (units, 1, 1)."""
    c, h, w = spec.input_shape
    out = []
    for ls in spec.layers:
        if ls.kind == "conv":
            h, w = L.output_hw(h, w, ls.kernel, ls.stride, ls.pad)
            c = ls.out_channels
        elif ls.kind in POOLS:
            h, w = L.output_hw(h, w, ls.kernel, ls.stride, ls.pad)
        elif ls.kind == "fc":
            c, h, w = ls.units, 1, 1
        out.append((c, h, w))
    return out


def line_shapes(spec: ArchitectureSpec) -> list[tuple[int, int, int]]:
    """Output shape per source line, i.e. per column of the structure table."""
    per_line: dict[int, tuple[int, int, int]] = {}
    for ls, shape in zip(spec.layers, infer_shapes(spec)):
        per_line[ls.line] = shape
    return [per_line[k] for k in sorted(per_line)]


def fc_input_sizes(spec: ArchitectureSpec) -> list[int]:
    sizes, prev = [], spec.input_shape
    for ls, shape in zip(spec.layers, infer_shapes(spec)):
        if ls.kind == "fc":
            sizes.append(prev[0] * prev[1] * prev[2])
        prev = shape
    return sizes


def trace(spec: ArchitectureSpec) -> list[int]:
    """Spatial size after each windowed layer, then the width of each fc layer."""
    out = [spec.input_shape[1]]
    for ls, (c, h, w) in zip(spec.layers, infer_shapes(spec)):
        if ls.kind == "conv" or ls.kind in POOLS:
            out.append(h)
        elif ls.kind == "fc":
            out.append(c)
    return out


def deviations() -> list[dict[str, str]]:
    """Recorded disagreements between TABLE_MAPS and the derived shapes."""
    text = resources.files("exprbench").joinpath("data/deviations.csv").read_text(encoding="utf-8")
    return list(csv.DictReader(text.splitlines()))


# --------------------------------------------------------------------------
# parameters and execution

def _param_layers(spec: ArchitectureSpec):
    """Yield (name, layer spec, fan_in) for every parameterized layer."""
    shapes = [spec.input_shape] + infer_shapes(spec)
    n_conv = n_fc = 0
    for i, ls in enumerate(spec.layers):
        c, h, w = shapes[i]
        if ls.kind == "conv":
            n_conv += 1
            yield f"conv{n_conv}", ls, c
        elif ls.kind == "fc":
            last = i + 1 < len(spec.layers) and spec.layers[i + 1].kind == "softmax"
            n_fc += 1
            yield ("out" if last else f"fc{n_fc}"), ls, c * h * w


def param_shapes(spec: ArchitectureSpec) -> dict[str, tuple[int, ...]]:
    out = {}
    for name, ls, fan_in in _param_layers(spec):
        if ls.kind == "conv":
            out[f"{name}.weight"] = (ls.out_channels, fan_in, *ls.kernel)
            out[f"{name}.bias"] = (ls.out_channels,)
        else:
            out[f"{name}.weight"] = (ls.units, fan_in)
            out[f"{name}.bias"] = (ls.units,)
    return out


def param_count(spec: ArchitectureSpec) -> int:
    return sum(math.prod(s) for s in param_shapes(spec).values())


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(spec: ArchitectureSpec, rng: Rng, dtype=None) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, drawn in layer order."""
    dtype = dtype or default_dtype()
    params = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        receptive = math.prod(shape[2:])
        bound = xavier_bound(shape[1] * receptive, shape[0] * receptive)
        params[name] = random_uniform(shape, -bound, bound, rng, dtype=dtype)
    return params


@dataclass
class Network:
    spec: ArchitectureSpec
    layers: list[L.Layer] = field(default_factory=list)

    def forward(self, x, params, train=False, rng: Rng | None = None):
        """Logits for a (n, c, h, w) batch; softmax is left to the loss or caller."""
        for layer in self.layers:
            x = layer.forward(x, params, train, rng)
        return x

    def backward(self, grad_logits, params) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g, params, grads)
            if g is None:
                break
        return grads

    def predict_proba(self, x, params, batch_size=256):
        out = [L.softmax(self.forward(x[i:i + batch_size], params, train=False))
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.spec.classes))


def build_network(spec: ArchitectureSpec) -> Network:
    names = {id(ls): name for name, ls, _ in _param_layers(spec)}
    shapes = [spec.input_shape] + infer_shapes(spec)
    net = Network(spec)
    for i, ls in enumerate(spec.layers):
        tag = names.get(id(ls), f"{ls.kind}{i}")
        if ls.kind == "conv":
            net.layers.append(L.Conv2D(tag, shapes[i][0], ls.out_channels, ls.kernel, ls.stride, ls.pad))
        elif ls.kind == "fc":
            net.layers.append(L.Dense(tag))
        elif ls.kind == "relu":
            net.layers.append(L.ReLU(tag))
        elif ls.kind == "dropout":
            net.layers.append(L.Dropout(tag, ls.rate))
        elif ls.kind == "maxp":
            net.layers.append(L.MaxPool(tag, ls.kernel, ls.stride, ls.pad))
        elif ls.kind == "avgp":
            net.layers.append(L.AvgPool(tag, ls.kernel, ls.stride, ls.pad))
        elif ls.kind == "stochp":
            net.layers.append(L.StochPool(tag, ls.kernel, ls.stride, ls.pad))
        elif ls.kind == "lrn":
            net.layers.append(L.LRN(tag, ls.lrn))
    if net.layers:
        net.layers[0].need_input_grad = False
    return net

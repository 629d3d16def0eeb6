"""A small sequential network with hand-written reverse-mode gradients.

Supported layers: valid stride-1 1-D convolution over channels, dense,
ReLU, inverted dropout, flatten and softmax. Everything is float64 and
batched along the first axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ParameterError, ParseError, ShapeError, TapeError

INIT_STD = 0.1
CHECKPOINT_FORMAT = "dpgfolio-checkpoint"
CHECKPOINT_VERSION = 1

KINDS = ("conv1d", "dense", "relu", "softmax", "dropout", "flatten")
PARAMETRIC = ("conv1d", "dense")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int | None = None
    out_channels: int | None = None
    kernel_width: int | None = None
    input_length: int | None = None
    in_dim: int | None = None
    out_dim: int | None = None
    keep_probability: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")
        required = {
            "conv1d": ("in_channels", "out_channels", "kernel_width", "input_length"),
            "dense": ("in_dim", "out_dim"),
            "dropout": ("keep_probability",),
        }.get(self.kind, ())
        for name in required:
            value = getattr(self, name)
            if value is None or value <= 0:
                raise ParameterError(f"{self.kind} layer needs positive {name}, got {value}")
        if self.kind == "dropout" and not 0 < self.keep_probability <= 1:
            raise ParameterError("keep_probability must lie in (0, 1]")
        if self.kind == "conv1d" and self.kernel_width > self.input_length:
            raise ShapeError(
                f"kernel width {self.kernel_width} exceeds input length {self.input_length}"
            )

    @property
    def output_length(self) -> int:
        return self.input_length - self.kernel_width + 1

    def param_shapes(self):
        if self.kind == "conv1d":
            return (self.out_channels, self.in_channels, self.kernel_width), (self.out_channels,)
        if self.kind == "dense":
            return (self.in_dim, self.out_dim), (self.out_dim,)
        return None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def conv1d(in_channels, out_channels, kernel_width, input_length) -> LayerSpec:
    return LayerSpec("conv1d", in_channels=in_channels, out_channels=out_channels,
                     kernel_width=kernel_width, input_length=input_length)


def dense(in_dim, out_dim) -> LayerSpec:
    return LayerSpec("dense", in_dim=in_dim, out_dim=out_dim)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def softmax() -> LayerSpec:
    return LayerSpec("softmax")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dropout(keep_probability) -> LayerSpec:
    return LayerSpec("dropout", keep_probability=keep_probability)


def shape_chain(specs) -> list[tuple[int, ...]]:
    """Per-sample shape after each layer, starting with the input shape.

    Raises ShapeError when consecutive layers disagree.
    """
    if not specs:
        raise ShapeError("empty layer chain")
    first = specs[0]
    if first.kind == "conv1d":
        shape = (first.in_channels, first.input_length)
    elif first.kind == "dense":
        shape = (first.in_dim,)
    else:
        raise ShapeError("the first layer must be conv1d or dense")
    shapes = [shape]
    for i, spec in enumerate(specs):
        if spec.kind == "conv1d":
            if shape != (spec.in_channels, spec.input_length):
                raise ShapeError(f"layer {i}: conv1d expects {(spec.in_channels, spec.input_length)}, got {shape}")
            shape = (spec.out_channels, spec.output_length)
        elif spec.kind == "dense":
            if shape != (spec.in_dim,):
                raise ShapeError(f"layer {i}: dense expects ({spec.in_dim},), got {shape}")
            shape = (spec.out_dim,)
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "softmax" and len(shape) != 1:
            raise ShapeError(f"layer {i}: softmax needs a flat input, got {shape}")
        shapes.append(shape)
    return shapes


@dataclass(frozen=True)
class NetworkParams:
    """Weights and biases aligned with a layer chain; ``None`` for layers without parameters."""

    weights: tuple
    biases: tuple
    seed: int | None = None

    def arrays(self):
        for w, b in zip(self.weights, self.biases):
            if w is not None:
                yield w
                yield b

    @property
    def count(self) -> int:
        return sum(a.size for a in self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def map(self, fn, *others) -> "NetworkParams":
        """Apply ``fn`` arraywise across this and ``others`` (same structure)."""
        ws, bs = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w is None:
                ws.append(None)
                bs.append(None)
            else:
                ws.append(fn(w, *(o.weights[i] for o in others)))
                bs.append(fn(b, *(o.biases[i] for o in others)))
        return NetworkParams(tuple(ws), tuple(bs), self.seed)

    def zeros_like(self) -> "NetworkParams":
        return self.map(np.zeros_like)

    def equals(self, other: "NetworkParams") -> bool:
        a, b = list(self.arrays()), list(other.arrays())
        return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def init_params(specs, seed: int) -> NetworkParams:
    """All weights and biases drawn i.i.d. from N(0, 0.1^2), in layer order."""
    shape_chain(specs)
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for spec in specs:
        shapes = spec.param_shapes()
        if shapes is None:
            ws.append(None)
            bs.append(None)
            continue
        ws.append(rng.normal(0.0, INIT_STD, size=shapes[0]))
        bs.append(rng.normal(0.0, INIT_STD, size=shapes[1]))
    return NetworkParams(tuple(ws), tuple(bs), seed)


def _check_params(specs, params: NetworkParams):
    if len(params.weights) != len(specs):
        raise ShapeError(f"{len(params.weights)} parameter slots for {len(specs)} layers")
    for i, spec in enumerate(specs):
        shapes = spec.param_shapes()
        w, b = params.weights[i], params.biases[i]
        if shapes is None:
            if w is not None:
                raise ShapeError(f"layer {i} ({spec.kind}) carries parameters")
        elif w is None or w.shape != shapes[0] or b.shape != shapes[1]:
            raise ShapeError(f"layer {i} ({spec.kind}) parameters do not match {shapes}")


@dataclass
class Tape:
    specs: tuple
    params: NetworkParams
    inputs: list = field(default_factory=list)
    extras: list = field(default_factory=list)
    output: np.ndarray | None = None


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _conv_forward(x, w, b):
    # x (B, C, W); w (F, C, K) -> (B, F, L)
    f, c, k = w.shape
    cols = sliding_window_view(x, k, axis=2)  # (B, C, L, K)
    bsz, _, length, _ = cols.shape
    cols = cols.transpose(0, 2, 1, 3).reshape(bsz, length, c * k)
    out = cols @ w.reshape(f, c * k).T + b
    return out.transpose(0, 2, 1), cols


def _conv_backward(g, cols, x_shape, w, need_input_grad):
    f, c, k = w.shape
    bsz, _, length = g.shape
    gt = g.transpose(0, 2, 1)  # (B, L, F)
    dw = np.tensordot(gt, cols, axes=([0, 1], [0, 1])).reshape(f, c, k)
    db = g.sum(axis=(0, 2))
    dx = None
    if need_input_grad:
        dcols = (gt @ w.reshape(f, c * k)).reshape(bsz, length, c, k)
        dx = np.zeros(x_shape)
        for j in range(k):
            dx[:, :, j : j + length] += dcols[:, :, :, j].transpose(0, 2, 1)
    return dw, db, dx


def forward(params: NetworkParams, specs, x, mode: str = "eval", dropout_seed: int | None = None):
    """Run the chain on a batch ``x`` (or a single sample).

    Returns ``(output, tape)``. ``mode="train"`` applies dropout masks drawn
    from ``dropout_seed``; ``mode="eval"`` makes dropout the identity.
    """
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    specs = tuple(specs)
    _check_params(specs, params)
    shapes = shape_chain(specs)
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == shapes[0]
    if single:
        x = x[None]
    if x.shape[1:] != shapes[0]:
        raise ShapeError(f"input shape {x.shape[1:]} does not match {shapes[0]}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite network input")
    rng = np.random.default_rng(dropout_seed) if mode == "train" else None
    tape = Tape(specs, params)
    h = x
    for i, spec in enumerate(specs):
        tape.inputs.append(h)
        extra = None
        if spec.kind == "conv1d":
            h, extra = _conv_forward(h, params.weights[i], params.biases[i])
        elif spec.kind == "dense":
            h = h @ params.weights[i] + params.biases[i]
        elif spec.kind == "relu":
            h = np.maximum(h, 0.0)
        elif spec.kind == "flatten":
            h = h.reshape(h.shape[0], -1)
        elif spec.kind == "dropout":
            if mode == "train" and spec.keep_probability < 1.0:
                extra = (rng.random(h.shape) < spec.keep_probability) / spec.keep_probability
                h = h * extra
        elif spec.kind == "softmax":
            h = _softmax(h)
            extra = h
        tape.extras.append(extra)
    tape.output = h
    return (h[0] if single else h), tape


def backward(tape: Tape, output_gradient, params: NetworkParams | None = None) -> NetworkParams:
    """Gradients of a scalar objective given d(objective)/d(output)."""
    if tape.output is None or len(tape.inputs) != len(tape.specs):
        raise TapeError("tape was not produced by a complete forward pass")
    if params is not None and params is not tape.params:
        raise TapeError("tape was recorded with different parameters")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape == tape.output.shape[1:] and tape.output.shape[0] == 1:
        g = g[None]
    if g.shape != tape.output.shape:
        raise TapeError(f"output gradient shape {g.shape} does not match output {tape.output.shape}")
    p = tape.params
    dws = [None] * len(tape.specs)
    dbs = [None] * len(tape.specs)
    for i in range(len(tape.specs) - 1, -1, -1):
        spec, x, extra = tape.specs[i], tape.inputs[i], tape.extras[i]
        if spec.kind == "softmax":
            g = extra * (g - np.sum(g * extra, axis=-1, keepdims=True))
        elif spec.kind == "dropout":
            if extra is not None:
                g = g * extra
        elif spec.kind == "flatten":
            g = g.reshape(x.shape)
        elif spec.kind == "relu":
            g = g * (x > 0)
        elif spec.kind == "dense":
            dws[i] = x.T @ g
            dbs[i] = g.sum(axis=0)
            g = g @ p.weights[i].T if i > 0 else None
        elif spec.kind == "conv1d":
            dws[i], dbs[i], g = _conv_backward(g, extra, x.shape, p.weights[i], i > 0)
    return NetworkParams(tuple(dws), tuple(dbs), p.seed)


def l2_penalty(params: NetworkParams, lam: float) -> float:
    """``lam`` times the sum of squared weights; biases are not penalized."""
    if lam < 0:
        raise ParameterError("L2 coefficient must be nonnegative")
    if lam == 0:
        return 0.0
    return lam * sum(float(np.sum(w * w)) for w in params.weights if w is not None)


def l2_gradient(params: NetworkParams, lam: float) -> NetworkParams:
    ws = tuple(None if w is None else 2.0 * lam * w for w in params.weights)
    bs = tuple(None if b is None else np.zeros_like(b) for b in params.biases)
    return NetworkParams(ws, bs, params.seed)


@dataclass(frozen=True)
class AdamState:
    m: NetworkParams
    v: NetworkParams
    step: int = 0
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def create(cls, params: NetworkParams, learning_rate: float = 1e-5, **kw) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, learning_rate, **kw)


def adam_step(state: AdamState, params: NetworkParams, gradients: NetworkParams):
    """One bias-corrected Adam update that descends along ``gradients``."""
    grads = list(gradients.arrays())
    if len(grads) != len(list(params.arrays())):
        raise ShapeError("gradient structure does not match parameters")
    for g, p in zip(grads, params.arrays()):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m = state.m.map(lambda mm, g: b1 * mm + (1 - b1) * g, gradients)
    v = state.v.map(lambda vv, g: b2 * vv + (1 - b2) * g * g, gradients)
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    lr, eps = state.learning_rate, state.epsilon
    new = params.map(lambda p, mm, vv: p - lr * (mm / c1) / (np.sqrt(vv / c2) + eps), m, v)
    return AdamState(m, v, t, lr, b1, b2, eps), new


# -- checkpoints ----------------------------------------------------------------
#
# JSON document: {"format", "version", "seed", "layers": [LayerSpec dicts],
# "params": [{"weight_shape", "weight", "bias"} | null per layer], "meta": {...}}.
# Floats are written with repr precision, so a save/load round trip is exact.


def checkpoint_dict(specs, params: NetworkParams, meta: dict | None = None) -> dict:
    _check_params(tuple(specs), params)
    entries = []
    for w, b in zip(params.weights, params.biases):
        if w is None:
            entries.append(None)
        else:
            entries.append({"weight_shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()})
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": params.seed,
        "layers": [s.to_dict() for s in specs],
        "params": entries,
        "meta": meta or {},
    }


def save_checkpoint(path, specs, params: NetworkParams, meta: dict | None = None) -> None:
    doc = checkpoint_dict(specs, params, meta)
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(path):
    """Returns ``(specs, params, meta)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ParseError("not a checkpoint file", path=path)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {doc.get('version')}", path=path)
    specs = tuple(LayerSpec(**d) for d in doc["layers"])
    ws, bs = [], []
    for entry in doc["params"]:
        if entry is None:
            ws.append(None)
            bs.append(None)
        else:
            ws.append(np.asarray(entry["weight"], dtype=np.float64).reshape(entry["weight_shape"]))
            bs.append(np.asarray(entry["bias"], dtype=np.float64))
    params = NetworkParams(tuple(ws), tuple(bs), doc.get("seed"))
    _check_params(specs, params)
    return specs, params, doc.get("meta", {})

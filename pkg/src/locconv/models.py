"""Declarative architectures and their runtime instantiation.

A :class:`ModelSpec` is an ordered tuple of layer descriptors. Shapes and
parameter counts follow from the descriptors alone (:func:`infer`), so a spec
is checked before any weights exist. :func:`instantiate` walks the same
descriptors to create weights and a forward function.

Per-sample shapes are ``(W, H, C)`` for grids and ``(F,)`` for flat vectors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import blocks, ops
from .conv import conv2d
from .tensor import ShapeError, Tensor

DEFAULT_HIDDEN = "relu"


# --- descriptors --------------------------------------------------------------

@dataclass(frozen=True)
class Input:
    pass


@dataclass(frozen=True)
class LI:
    channels: int = 2


@dataclass(frozen=True)
class LW:
    channels: int = 2
    variant: str = "1x1"       # "1x1", "AxB" or "elementwise"
    a: int = 1
    b: int = 1
    activation: str = "identity"


@dataclass(frozen=True)
class Static:
    kind: str = "coords"       # "coords" or "random"
    channels: int = 2


@dataclass(frozen=True)
class P:
    pass


@dataclass(frozen=True)
class Concat:
    sources: tuple


@dataclass(frozen=True)
class DefinePersistent:
    sources: tuple


@dataclass(frozen=True)
class AppendPersistent:
    pass


@dataclass(frozen=True)
class Conv:
    k1: int
    k2: int
    filters: int
    activation: str = DEFAULT_HIDDEN


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = "linear"


@dataclass(frozen=True)
class Pool:
    kind: str = "max"
    pw: int = 2
    ph: int = 2


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Last:
    copies: int = 1


@dataclass(frozen=True)
class PerFrame:
    layers: tuple


@dataclass(frozen=True)
class ToGrid:
    pass


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple
    width_scale: float = 1.0


# --- shape inference ----------------------------------------------------------

@dataclass
class _Ctx:
    W: int
    H: int
    T: int
    p_channels: Optional[int] = None


def _source_channels(src, ctx: _Ctx) -> tuple[int, int]:
    """(channels, parameter count) contributed by one concat source."""
    W, H, T = ctx.W, ctx.H, ctx.T
    if isinstance(src, Input):
        return T, 0
    if isinstance(src, LI):
        return src.channels, W * H * src.channels
    if isinstance(src, LW):
        if src.variant == "1x1":
            return src.channels, W * H * T * src.channels
        if src.variant == "AxB":
            return src.channels, W * H * T * src.a * src.b * src.channels
        if src.variant == "elementwise":
            return T, W * H * T
        raise ValueError(f"unknown LW variant {src.variant!r}")
    if isinstance(src, Static):
        return src.channels, 0
    if isinstance(src, P):
        if ctx.p_channels is None:
            raise ShapeError("P used before DefinePersistent")
        return ctx.p_channels, 0
    raise TypeError(f"not a concat source: {src!r}")


def _step(layer, shape: tuple, ctx: _Ctx) -> tuple[tuple, int]:
    """Output shape and parameter count of one layer."""
    if isinstance(layer, Concat):
        chans = [_source_channels(s, ctx) for s in layer.sources]
        return (ctx.W, ctx.H, sum(c for c, _ in chans)), sum(p for _, p in chans)
    if isinstance(layer, DefinePersistent):
        chans = [_source_channels(s, ctx) for s in layer.sources]
        ctx.p_channels = sum(c for c, _ in chans)
        return shape, sum(p for _, p in chans)
    if isinstance(layer, AppendPersistent):
        if ctx.p_channels is None:
            raise ShapeError("AppendPersistent before DefinePersistent")
        if len(shape) != 3 or shape[:2] != (ctx.W, ctx.H):
            raise ShapeError(f"cannot append P to shape {shape}")
        return shape[:2] + (shape[2] + ctx.p_channels,), 0
    if isinstance(layer, Conv):
        if len(shape) != 3:
            raise ShapeError(f"Conv needs a grid input, got {shape}")
        if layer.filters < 1 or layer.k1 < 1 or layer.k2 < 1:
            raise ShapeError(f"degenerate conv {layer}")
        n = shape[2]
        return shape[:2] + (layer.filters,), layer.k1 * layer.k2 * n * layer.filters + layer.filters
    if isinstance(layer, Dense):
        if len(shape) != 1:
            raise ShapeError(f"Dense needs a flat input, got {shape}")
        if layer.units < 1:
            raise ShapeError(f"degenerate dense layer {layer}")
        return (layer.units,), shape[0] * layer.units + layer.units
    if isinstance(layer, Pool):
        if len(shape) != 3 or shape[0] % layer.pw or shape[1] % layer.ph:
            raise ShapeError(f"pool {layer.pw}x{layer.ph} does not divide {shape}")
        return (shape[0] // layer.pw, shape[1] // layer.ph, shape[2]), 0
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),), 0
    if isinstance(layer, Last):
        if len(shape) != 3:
            raise ShapeError(f"Last needs a grid input, got {shape}")
        return shape[:2] + (layer.copies,), 0
    if isinstance(layer, PerFrame):
        frame_ctx = _Ctx(ctx.W, ctx.H, 1)
        sub_shape, count = (ctx.W, ctx.H, 1), 0
        for sub in layer.layers:
            sub_shape, n = _step(sub, sub_shape, frame_ctx)
            count += n
        if len(sub_shape) != 1:
            raise ShapeError(f"per-frame trunk must end flat, ends with {sub_shape}")
        return (sub_shape[0] * ctx.T,), count
    if isinstance(layer, ToGrid):
        if len(shape) != 1 or shape[0] % (ctx.W * ctx.H):
            raise ShapeError(f"cannot fold {shape} onto a {ctx.W}x{ctx.H} grid")
        return (ctx.W, ctx.H, shape[0] // (ctx.W * ctx.H)), 0
    raise TypeError(f"unknown layer descriptor {layer!r}")


def infer(spec: ModelSpec, W: int, H: int, T: int) -> list:
    """Per-layer ``(layer, output shape, parameter count)``; raises ShapeError on mismatch."""
    ctx = _Ctx(W, H, T)
    shape, rows = (W, H, T), []
    for layer in spec.layers:
        shape, n = _step(layer, shape, ctx)
        rows.append((layer, shape, n))
    return rows


def param_count(spec: ModelSpec, W: int, H: int, T: int) -> int:
    return sum(n for _, _, n in infer(spec, W, H, T))


def output_shape(spec: ModelSpec, W: int, H: int, T: int) -> tuple:
    return infer(spec, W, H, T)[-1][1]


# --- text form ----------------------------------------------------------------

def _fmt_shape(shape) -> str:
    return "×".join(str(s) for s in shape)


def _fmt_source(src) -> str:
    if isinstance(src, Input):
        return "I"
    if isinstance(src, LI):
        return f"LI({src.channels})"
    if isinstance(src, LW):
        if src.variant == "elementwise":
            return "LW ⊙ I"
        a, b = (1, 1) if src.variant == "1x1" else (src.a, src.b)
        return f"LW({src.channels}) ⊗({a},{b}) I"
    if isinstance(src, Static):
        return "Coords(X,Y)" if src.kind == "coords" else f"Random({src.channels})"
    return "P"


_ACT = {"relu": "ReLU", "sigmoid": "σ"}


def _fmt_layer(layer) -> str:
    if isinstance(layer, Conv):
        s = f"C({layer.k1}×{layer.k2}×{layer.filters})"
    elif isinstance(layer, Dense):
        s = f"FC({layer.units})"
    elif isinstance(layer, Pool):
        return f"Pool_{layer.kind}({layer.pw}×{layer.ph})"
    elif isinstance(layer, Flatten):
        return "F(·)"
    elif isinstance(layer, Last):
        return "Last(I)" if layer.copies == 1 else f"Last(I)×{layer.copies}"
    elif isinstance(layer, ToGrid):
        return "F(·)"
    else:
        return repr(layer)
    act = _ACT.get(layer.activation)
    return f"{act}({s})" if act else s


def describe(spec: ModelSpec, W: int, H: int, T: int) -> str:
    """Render a spec in arrow notation with the tensor shape on every arrow."""
    rows = infer(spec, W, H, T)
    parts: list[str] = []
    prefix = []
    for i, (layer, shape, _) in enumerate(rows):
        arrow = f" -[{_fmt_shape(shape)}]-> "
        if isinstance(layer, DefinePersistent):
            prefix.append("P := [" + ", ".join(_fmt_source(s) for s in layer.sources) + "]")
        elif isinstance(layer, Concat):
            names = [_fmt_source(s) for s in layer.sources]
            parts.append(("[" + ", ".join(names) + "]" if len(names) > 1 else names[0]) + arrow)
        elif isinstance(layer, AppendPersistent):
            body = parts.pop()
            layer_txt = body.split(" -[")[0]
            parts.append(f"[{layer_txt}, P]" + arrow)
        elif isinstance(layer, PerFrame):
            sub = ModelSpec("frame", layer.layers)
            trunk = describe(sub, W, H, 1)
            prefix.append("C_t := F(I_t) -[" + f"{W}×{H}×1]-> " + trunk)
            parts.append(f"[C_0, .., C_{T - 1}]" + arrow)
        else:
            parts.append(_fmt_layer(layer) + arrow)
    body = "".join(parts).rstrip()
    if body.endswith("->"):
        body = body[: body.rfind(" -[")]
    text = "; ".join(prefix + [body]) if prefix else body
    return text


# --- runtime ------------------------------------------------------------------

@dataclass
class Model:
    spec: ModelSpec
    grid: tuple                         # (W, H, T)
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    _forward: Optional[Callable] = field(default=None, repr=False)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 3:
            out = self(ops.reshape(x, (1,) + tuple(x.shape)))
            return ops.reshape(out, tuple(out.shape[1:]))
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.grid):
            raise ShapeError(f"{self.spec.name}: expected [B, {self.grid[0]}, {self.grid[1]}, {self.grid[2]}], got {x.shape}")
        return self._forward(x)

    @property
    def name(self) -> str:
        return self.spec.name

    def parameters(self) -> list:
        return list(self.params.values())

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def predict(self, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = []
        for start in range(0, len(inputs), batch_size):
            out.append(self(Tensor(inputs[start:start + batch_size])).data)
        return np.concatenate(out, axis=0)

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict) -> None:
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise ShapeError(f"{k}: stored shape {v.shape} != {self.params[k].shape}")
            self.params[k].data[...] = v

    def describe(self) -> str:
        return describe(self.spec, *self.grid)


class _Builder:
    def __init__(self, W, H, T, rng):
        self.W, self.H, self.T = W, H, T
        self.rng = rng
        self.params: dict = {}
        self.buffers: dict = {}

    def param(self, name, data):
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def source(self, src, name):
        W, H, T = self.W, self.H, self.T
        if isinstance(src, Input):
            return lambda x, env: x
        if isinstance(src, LI):
            li = blocks.LearnableInputMap(W, H, src.channels, self.rng, name)
            self.params[li.maps.name] = li.maps
            return lambda x, env: blocks._maps_for_batch(li.maps, x)
        if isinstance(src, LW):
            variant = {"1x1": "1x1", "AxB": "AxB", "elementwise": "elementwise"}[src.variant]
            bank = blocks.LocalWeightBank(variant, W, H, T, src.channels, src.a, src.b,
                                          src.activation, self.rng, name)
            self.params[bank.weights.name] = bank.weights
            return lambda x, env: bank(x)
        if isinstance(src, Static):
            smap = blocks.StaticInputMap(src.kind, W, H, src.channels, self.rng)
            self.buffers[f"{name}.static"] = smap.maps.data
            return lambda x, env: blocks._maps_for_batch(smap.maps, x)
        if isinstance(src, P):
            return lambda x, env: env["p"]
        raise TypeError(src)

    def layer(self, layer, shape, name):
        if isinstance(layer, Concat):
            fns = [self.source(s, f"{name}.{i}") for i, s in enumerate(layer.sources)]
            if len(fns) == 1:
                return lambda h, env: fns[0](env["x"], env)
            return lambda h, env: ops.concat([f(env["x"], env) for f in fns], axis=-1)
        if isinstance(layer, DefinePersistent):
            fns = [self.source(s, f"{name}.{i}") for i, s in enumerate(layer.sources)]

            def define(h, env):
                env["p"] = ops.concat([f(env["x"], env) for f in fns], axis=-1) if len(fns) > 1 else fns[0](env["x"], env)
                return h
            return define
        if isinstance(layer, AppendPersistent):
            return lambda h, env: ops.concat([h, env["p"]], axis=-1)
        if isinstance(layer, Conv):
            n = shape[2]
            k = self.param(f"{name}.kernel", blocks.glorot_uniform(
                self.rng, (layer.k1, layer.k2, n, layer.filters),
                layer.k1 * layer.k2 * n, layer.k1 * layer.k2 * layer.filters))
            b = self.param(f"{name}.bias", np.zeros(layer.filters))
            act = ops.activation(layer.activation)
            return lambda h, env: act(conv2d(h, k, b))
        if isinstance(layer, Dense):
            w = self.param(f"{name}.weight", blocks.glorot_uniform(
                self.rng, (shape[0], layer.units), shape[0], layer.units))
            b = self.param(f"{name}.bias", np.zeros(layer.units))
            act = ops.activation(layer.activation)
            return lambda h, env: act(ops.fully_connected(h, w, b))
        if isinstance(layer, Pool):
            pool = ops.max_pool if layer.kind == "max" else ops.avg_pool
            return lambda h, env: pool(h, layer.pw, layer.ph)
        if isinstance(layer, (Flatten, ToGrid)):
            return None  # handled with the known output shape
        if isinstance(layer, Last):
            T = self.T

            def last(h, env):
                frame = ops.take(h, T - 1, T, axis=-1)
                return frame if layer.copies == 1 else ops.concat([frame] * layer.copies, axis=-1)
            return last
        if isinstance(layer, PerFrame):
            sub = _Builder(self.W, self.H, 1, self.rng)
            sub.params, sub.buffers = self.params, self.buffers
            steps = sub.chain(layer.layers, (self.W, self.H, 1), f"{name}.frame")
            T, W, H = self.T, self.W, self.H

            def per_frame(h, env):
                B = h.shape[0]
                frames = ops.reshape(ops.transpose(h, (0, 3, 1, 2)), (B * T, W, H, 1))
                feats = _run(steps, frames, {"x": frames})
                return ops.reshape(feats, (B, T * feats.shape[1]))
            return per_frame
        raise TypeError(layer)

    def chain(self, layers, in_shape, prefix):
        ctx = _Ctx(self.W, self.H, self.T)
        steps, shape = [], in_shape
        for i, layer in enumerate(layers):
            fn = self.layer(layer, shape, f"{prefix}{i}")
            shape, _ = _step(layer, shape, ctx)
            if fn is None:
                out_shape = shape
                fn = (lambda s: lambda h, env: ops.reshape(h, (h.shape[0],) + s))(out_shape)
            steps.append(fn)
        return steps


def _run(steps, x, env):
    h = x
    for fn in steps:
        h = fn(h, env)
    return h


def instantiate(spec: ModelSpec, W: int, H: int, T: int, seed: int = 0) -> Model:
    """Create weights for ``spec`` on a ``W x H`` grid with ``T`` input frames."""
    infer(spec, W, H, T)
    builder = _Builder(W, H, T, np.random.default_rng(seed))
    steps = builder.chain(spec.layers, (W, H, T), "")

    def forward(x):
        return _run(steps, x, {"x": x})

    return Model(spec, (W, H, T), builder.params, builder.buffers, forward)


# --- Table 1 builders ---------------------------------------------------------

def scaled(n: int, scale: float) -> int:
    """Round ``n * scale`` half up; widths below one filter are rejected."""
    if scale <= 0:
        raise ValueError(f"width_scale must be positive, got {scale}")
    m = int(math.floor(n * scale + 0.5))
    if m < 1:
        raise ValueError(f"width {n} x scale {scale} leaves no filters")
    return m


def _cnn_trunk(first: int, s: float, n_out: int, act: str, persistent=False) -> list:
    widths = (first, scaled(30, s), scaled(30, s))
    kernels = ((5, 5), (4, 4), (3, 3))
    layers = []
    for (k1, k2), w in zip(kernels, widths):
        layers.append(Conv(k1, k2, w, act))
        if persistent:
            layers.append(AppendPersistent())
    layers.append(Conv(1, 1, n_out, "linear"))
    return layers


LW2 = LW(2)
LW222 = LW(2, "AxB", 2, 2)

# concat sources in front of the Z trunk
_Z_INPUTS = {
    "CoordConv": (Input(), Static("coords")),
    "RandomConv": (Input(), Static("random")),
    "LI_CNN": (Input(), LI(2)),
    "LW_CNN": (Input(), LW2),
    "LW111_CNN": (LW(variant="elementwise"),),
    "LW222_CNN": (Input(), LW222),
    "LI_LW_CNN": (Input(), LI(2), LW2),
    "LI_LW222_CNN": (Input(), LI(2), LW222),
    "LI_LW_MINUS_I_CNN": (LI(2), LW2),
    "LI_LW222_MINUS_I_CNN": (LI(2), LW222),
}

# (P sources, whether the input I is kept)
_PERSISTENT = {
    "PERSISTENT_LI_CNN": ((LI(2),), True),
    "PERSISTENT_LI_LW_CNN": ((LI(2), LW2), True),
    "PERSISTENT_LI_LW222_CNN": ((LI(2), LW222), True),
    "PERSISTENT_LI_LW_MINUS_I_CNN": ((LI(2), LW2), False),
    "PERSISTENT_LI_LW222_MINUS_I_CNN": ((LI(2), LW222), False),
}

BASELINE_TAGS = ("PR", "MLP", "CNN", "PDCNN")
LOCALIZED_TAGS = tuple(_Z_INPUTS) + tuple(_PERSISTENT)
ALL_TAGS = BASELINE_TAGS + LOCALIZED_TAGS
BALL_TAGS = ("BALLS_CNN", "BALLS_LI_CNN", "BALLS_COORDCONV", "BALLS_RANDOMCONV")


def normalize_tag(tag: str) -> str:
    key = tag.strip().upper().replace("-", "_").replace("+", "_")
    lookup = {t.upper(): t for t in ALL_TAGS + BALL_TAGS}
    if key not in lookup:
        raise ValueError(f"unknown model tag {tag!r}; known: {', '.join(ALL_TAGS + BALL_TAGS)}")
    return lookup[key]


def _z_spec(tag, W, H, T, s, n_out, act, first):
    return ModelSpec(tag, (Concat(_Z_INPUTS[tag]),) + tuple(_cnn_trunk(first, s, n_out, act)), s)


def _persistent_spec(tag, W, H, T, s, n_out, act, first):
    sources, keep_input = _PERSISTENT[tag]
    head = Concat((Input(), P())) if keep_input else Concat((P(),))
    return ModelSpec(tag, (DefinePersistent(sources), head) + tuple(_cnn_trunk(first, s, n_out, act, True)), s)


def model_spec(tag: str, W: int, H: int, T: int, width_scale: float = 1.0, n_out: int = 1,
               hidden_activation: str = DEFAULT_HIDDEN, match_params: bool = False) -> ModelSpec:
    """Spec for one Table 1 architecture (or a bouncing-ball net).

    With ``match_params`` the first trunk layer of a localized variant is
    resized so its total parameter count is as close as possible to the
    plain CNN's.
    """
    if min(W, H, T) < 1:
        raise ValueError(f"grid dims must be positive, got W={W} H={H} T={T}")
    tag = normalize_tag(tag)
    s, act = width_scale, hidden_activation
    if tag in BALL_TAGS:
        return ball_spec(tag, s, hidden_activation)
    if tag == "PR":
        return ModelSpec(tag, (Concat((Input(),)), Last(n_out)), s)
    if tag == "CNN":
        return ModelSpec(tag, (Concat((Input(),)),) + tuple(_cnn_trunk(scaled(30, s), s, n_out, act)), s)
    if tag == "MLP":
        return ModelSpec(tag, (Concat((Input(),)), Flatten(), Dense(scaled(500, s), "sigmoid"),
                               Dense(W * H * n_out, "linear"), ToGrid()), s)
    if tag == "PDCNN":
        trunk = (Conv(3, 3, scaled(10, s), act), Pool("max", 2, 2), Conv(4, 4, scaled(30, s), act),
                 Flatten(), Dense(scaled(30, s), "relu"))
        return ModelSpec(tag, (Concat((Input(),)), PerFrame(trunk), Dense(scaled(200, s), "relu"),
                               Dense(W * H * n_out, "sigmoid"), ToGrid()), s)
    make = _z_spec if tag in _Z_INPUTS else _persistent_spec
    base_first = scaled(28, s) if tag in _Z_INPUTS else scaled(30, s)
    spec = make(tag, W, H, T, s, n_out, act, base_first)
    if not match_params:
        return spec
    target = param_count(model_spec("CNN", W, H, T, s, n_out, act), W, H, T)
    best = min(range(1, 3 * base_first + 1),
               key=lambda f: (abs(param_count(make(tag, W, H, T, s, n_out, act, f), W, H, T) - target), -f))
    return make(tag, W, H, T, s, n_out, act, best)


def build(tag: str, W: int, H: int, T: int, width_scale: float = 1.0, seed: int = 0,
          n_out: int = 1, hidden_activation: str = DEFAULT_HIDDEN, match_params: bool = False) -> Model:
    spec = model_spec(tag, W, H, T, width_scale, n_out, hidden_activation, match_params)
    if spec.name in BALL_TAGS:
        W = H = BALL_GRID
        T = BALL_WINDOW
    return instantiate(spec, W, H, T, seed)


# --- bouncing-ball nets -------------------------------------------------------

BALL_GRID = 30
BALL_WINDOW = 25

_BALL_ROWS = {
    "BALLS_CNN": ((Input(),), 22),
    "BALLS_LI_CNN": ((Input(), LI(2)), 20),
    "BALLS_COORDCONV": ((Input(), Static("coords")), 21),
    "BALLS_RANDOMCONV": ((Input(), Static("random")), 21),
}


def ball_spec(tag: str, width_scale: float = 1.0, hidden_activation: str = DEFAULT_HIDDEN) -> ModelSpec:
    sources, first = _BALL_ROWS[tag]
    s = width_scale
    return ModelSpec(tag, (Concat(sources),
                           Conv(20, 20, scaled(first, s), hidden_activation),
                           Conv(10, 10, scaled(10, s), hidden_activation),
                           Conv(1, 1, 1, "linear")), s)


def build_bouncing_ball_models(width_scale: float = 1.0, seed: int = 0,
                               hidden_activation: str = DEFAULT_HIDDEN) -> dict:
    """CNN, LI CNN, CoordConv and RandomConv for 30x30 frames and 25 input frames."""
    return {tag: instantiate(ball_spec(tag, width_scale, hidden_activation), BALL_GRID, BALL_GRID,
                             BALL_WINDOW, seed)
            for tag in BALL_TAGS}

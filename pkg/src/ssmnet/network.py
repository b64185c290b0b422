"""Multi-block networks: JSON configs, presets, offline and streaming
forward passes, and whole-network parameter / FLOP totals."""
from __future__ import annotations

import collections
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from importlib import resources

import numpy as np
from scipy.special import expit

from .blocks import LAYER_NORM_EPS, forward_fft
from .params import SsmBlockSpec, SsmParams, Variant, init_params
from .recurrence import count_inference, init_state, prepare, _step

__all__ = [
    "ConfigError",
    "Resample",
    "LayerConfig",
    "HeadConfig",
    "NetworkConfig",
    "Network",
    "parse_config",
    "config_from_dict",
    "golden_preset_text",
    "dump_config",
    "preset",
    "PRESETS",
    "build_network",
    "forward_offline",
    "forward_stream",
    "apply_head",
    "count_network",
    "NetworkCount",
    "CountItem",
]

RESAMPLE_KINDS = ("none", "pool", "proj_down", "proj_up")
SKIP_KINDS = ("none", "identity", "projection")


class ConfigError(ValueError):
    """Invalid network config; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class Resample:
    """``pool``: average over ``window`` samples. ``proj_down``: project each
    non-overlapping window of ``window`` samples from ``H`` to ``H_out``
    channels. ``proj_up``: map each sample to ``factor`` samples of
    ``H_out`` channels."""
    kind: str = "none"
    window: int = 1
    factor: int = 1
    H: int | None = None
    H_out: int | None = None

    @property
    def down(self) -> int:
        return self.window if self.kind in ("pool", "proj_down") else 1

    @property
    def up(self) -> int:
        return self.factor if self.kind == "proj_up" else 1

    def to_dict(self) -> dict:
        if self.kind == "none":
            return {"kind": "none"}
        if self.kind == "pool":
            return {"kind": "pool", "window": self.window}
        if self.kind == "proj_down":
            return {"kind": "proj_down", "window": self.window, "H": self.H, "H_out": self.H_out}
        return {"kind": "proj_up", "factor": self.factor, "H": self.H, "H_out": self.H_out}


@dataclass(frozen=True)
class LayerConfig:
    variant: str
    H: int
    H_out: int | None = None
    N: int = 1
    M: int = 1
    G: int = 1
    resample: Resample = field(default_factory=Resample)
    skip: str = "none"
    norm: bool = True
    activation: bool = True
    long_skip_to: int | None = None
    stage: str | None = None

    @property
    def block(self) -> SsmBlockSpec:
        return SsmBlockSpec(self.variant, self.H, self.H_out, self.N, self.M, self.G)

    @property
    def in_channels(self) -> int:
        return self.resample.H if self.resample.kind == "proj_up" else self.H

    @property
    def out_channels(self) -> int:
        h_out = self.H if self.H_out is None else self.H_out
        return self.resample.H_out if self.resample.kind == "proj_down" else h_out

    def to_dict(self) -> dict:
        d = {"variant": Variant.parse(self.variant).value, "H": self.H,
             "H_out": self.H if self.H_out is None else self.H_out,
             "N": self.N, "M": self.M, "G": self.G, "resample": self.resample.to_dict(),
             "skip": self.skip, "norm": self.norm, "activation": self.activation,
             "long_skip_to": self.long_skip_to}
        if self.stage is not None:
            d["stage"] = self.stage
        return d


@dataclass(frozen=True)
class HeadConfig:
    """Global average pooling over time, then a 2-layer MLP, applied once per clip."""
    kind: str = "gap_mlp"
    hidden: int = 0
    classes: int = 0
    clip_seconds: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class NetworkConfig:
    sample_rate_hz: int
    layers: tuple[LayerConfig, ...]
    head: HeadConfig | None = None
    input_length: int | None = None
    name: str | None = None

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    def rate_factor(self, upto: int | None = None, stage: str | None = None) -> Fraction:
        """Cumulative output-rate / input-rate after ``upto`` layers (all by
        default), optionally restricted to layers of one ``stage``."""
        r = Fraction(1)
        for layer in self.layers[:upto]:
            if stage is None or layer.stage == stage:
                r *= Fraction(layer.resample.up, layer.resample.down)
        return r

    def to_dict(self) -> dict:
        d = {"sample_rate_hz": self.sample_rate_hz,
             "layers": [layer.to_dict() for layer in self.layers]}
        if self.head is not None:
            d["head"] = self.head.to_dict()
        if self.input_length is not None:
            d["input_length"] = self.input_length
        if self.name is not None:
            d["name"] = self.name
        return d


def dump_config(config: NetworkConfig) -> str:
    return json.dumps(config.to_dict(), indent=2) + "\n"


_LAYER_KEYS = {"variant", "H", "H_out", "N", "M", "G", "resample", "skip", "norm",
               "activation", "long_skip_to", "stage"}


def _int(value, what, errors, minimum=1):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        errors.append(f"{what} must be an integer >= {minimum}, got {value!r}")
        return None
    return value


def _parse_resample(d, where, errors) -> Resample:
    if d is None:
        return Resample()
    if not isinstance(d, dict):
        errors.append(f"{where}: resample must be an object")
        return Resample()
    kind = d.get("kind", "none")
    if kind not in RESAMPLE_KINDS:
        errors.append(f"{where}: unknown resample kind {kind!r}")
        return Resample()
    if kind == "none":
        return Resample()
    if kind == "pool":
        w = _int(d.get("window"), f"{where}: pool window", errors)
        return Resample("pool", window=w or 1)
    H = _int(d.get("H"), f"{where}: {kind} H", errors)
    H_out = _int(d.get("H_out"), f"{where}: {kind} H_out", errors)
    if kind == "proj_down":
        w = _int(d.get("window"), f"{where}: proj_down window", errors)
        return Resample("proj_down", window=w or 1, H=H, H_out=H_out)
    f = _int(d.get("factor"), f"{where}: proj_up factor", errors)
    return Resample("proj_up", factor=f or 1, H=H, H_out=H_out)


def _parse_layer(d, k, errors) -> LayerConfig | None:
    where = f"layer {k}"
    if not isinstance(d, dict):
        errors.append(f"{where}: must be an object")
        return None
    unknown = set(d) - _LAYER_KEYS
    if unknown:
        errors.append(f"{where}: unknown keys {sorted(unknown)}")
    n_before = len(errors)
    try:
        variant = Variant.parse(d.get("variant")).value
    except ValueError as exc:
        errors.append(f"{where}: {exc}")
        variant = None
    H = _int(d.get("H"), f"{where}: H", errors)
    H_out = d.get("H_out", H)
    H_out = _int(H_out, f"{where}: H_out", errors) if H_out is not None else H
    dims = {name: _int(d.get(name, 1), f"{where}: {name}", errors) for name in ("N", "M", "G")}
    resample = _parse_resample(d.get("resample"), where, errors)
    skip = d.get("skip", "none")
    if skip not in SKIP_KINDS:
        errors.append(f"{where}: unknown skip kind {skip!r}")
    for flag in ("norm", "activation"):
        if not isinstance(d.get(flag, True), bool):
            errors.append(f"{where}: {flag} must be true or false")
    long_skip = d.get("long_skip_to")
    if long_skip is not None:
        _int(long_skip, f"{where}: long_skip_to", errors, minimum=0)
    if len(errors) > n_before:
        return None
    layer = LayerConfig(variant, H, H_out, dims["N"], dims["M"], dims["G"], resample, skip,
                        d.get("norm", True), d.get("activation", True), long_skip,
                        d.get("stage"))
    try:
        layer.block
    except ValueError as exc:
        errors.append(f"{where}: {exc}")
        return None
    return layer


def _check_chain(config: NetworkConfig, errors):
    layers = config.layers
    for k, layer in enumerate(layers):
        where = f"layer {k}"
        rs = layer.resample
        h_out = layer.block.H_out
        if rs.kind == "proj_up" and rs.H_out != layer.H:
            errors.append(f"{where}: proj_up outputs {rs.H_out} channels but block H is {layer.H}")
        if rs.kind == "proj_down" and rs.H != h_out:
            errors.append(f"{where}: proj_down expects {rs.H} channels but block H_out is {h_out}")
        if layer.skip == "identity" and layer.H != h_out:
            errors.append(f"{where}: identity skip needs H == H_out ({layer.H} != {h_out})")
        if k + 1 < len(layers) and layer.out_channels != layers[k + 1].in_channels:
            errors.append(f"{where}: outputs {layer.out_channels} channels but layer {k + 1} "
                          f"expects {layers[k + 1].in_channels}")
        dest = layer.long_skip_to
        if dest is not None:
            if not k < dest < len(layers):
                errors.append(f"{where}: long_skip_to {dest} must name a later layer")
                continue
            if layers[dest].H != h_out:
                errors.append(f"{where}: long skip carries {h_out} channels but layer {dest} "
                              f"block H is {layers[dest].H}")
            src_rate = config.rate_factor(k)
            dst_rate = config.rate_factor(dest) * layers[dest].resample.up
            if src_rate != dst_rate:
                errors.append(f"{where}: long skip joins different sample rates "
                              f"({src_rate} vs {dst_rate} of the input rate)")
    targets = [layer.long_skip_to for layer in layers if layer.long_skip_to is not None]
    for t in sorted({t for t in targets if targets.count(t) > 1}):
        errors.append(f"layer {t}: receives more than one long skip")
    if config.input_length is not None:
        length = Fraction(config.input_length)
        for k, layer in enumerate(layers):
            length *= layer.resample.up
            if length.denominator != 1 or length % layer.resample.down:
                errors.append(f"layer {k}: length {length} not divisible by "
                              f"window {layer.resample.down}")
                break
            length /= layer.resample.down


def config_from_dict(doc) -> NetworkConfig:
    errors = []
    if not isinstance(doc, dict):
        raise ConfigError(["config must be a JSON object"])
    rate = _int(doc.get("sample_rate_hz"), "sample_rate_hz", errors)
    raw_layers = doc.get("layers")
    if not isinstance(raw_layers, list) or not raw_layers:
        errors.append("layers must be a non-empty list")
        raw_layers = []
    layers = [_parse_layer(d, k, errors) for k, d in enumerate(raw_layers)]
    head = None
    if doc.get("head") is not None:
        h = doc["head"]
        if not isinstance(h, dict) or h.get("kind", "gap_mlp") != "gap_mlp":
            errors.append("head: only kind 'gap_mlp' is supported")
        else:
            hidden = _int(h.get("hidden"), "head: hidden", errors)
            classes = _int(h.get("classes"), "head: classes", errors)
            clip = h.get("clip_seconds", 1.0)
            if not isinstance(clip, (int, float)) or clip <= 0:
                errors.append("head: clip_seconds must be positive")
            head = HeadConfig("gap_mlp", hidden or 0, classes or 0, float(clip))
    input_length = doc.get("input_length")
    if input_length is not None:
        _int(input_length, "input_length", errors)
    if errors:
        raise ConfigError(errors)
    config = NetworkConfig(rate, tuple(layers), head, input_length, doc.get("name"))
    _check_chain(config, errors)
    if errors:
        raise ConfigError(errors)
    return config


def parse_config(text: str) -> NetworkConfig:
    """Parse and validate a JSON network config; raises :class:`ConfigError`
    listing every problem (with layer indices)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from None
    return config_from_dict(doc)


# ---------------------------------------------------------------- presets

def _layer(variant, H, H_out=None, N=1, M=1, resample=None, skip="none", norm=True,
           activation=True, long_skip_to=None, stage=None):
    return LayerConfig(Variant.parse(variant).value, H, H if H_out is None else H_out, N, M, 1,
                       resample or Resample(), skip, norm, activation, long_skip_to, stage)


def _kws_hybrid(channels, states, classes, name):
    kinds = ["full", "full", "bottleneck", "bottleneck", "pw_bottleneck", "pw_bottleneck"]
    pools = [4, 4, 2, 2, 2, 2]
    layers = []
    h_in = 1
    for k, (kind, ch, n, w) in enumerate(zip(kinds, channels, states, pools)):
        layers.append(_layer(kind, h_in, ch, n, 4 if kind == "bottleneck" else 1,
                             Resample("pool", window=w),
                             "none" if k == 0 else "projection"))
        h_in = ch
    head = HeadConfig("gap_mlp", channels[-1], classes, 1.0)
    return NetworkConfig(16000, tuple(layers), head, None, name)


def _dns_hourglass():
    # (variant, SSM channels, N, M, factor, projected channels)
    encoder = [("full", 1, 16, 1, 4, 16), ("full", 16, 4, 1, 4, 32),
               ("bottleneck", 32, 128, 4, 2, 64), ("bottleneck", 64, 128, 4, 2, 96),
               ("pw_bottleneck", 96, 256, 1, 2, 128), ("pw_bottleneck", 128, 256, 1, 2, 256)]
    layers = []
    for k, (v, h, n, m, w, h_next) in enumerate(encoder):
        layers.append(_layer(v, h, N=n, M=m, resample=Resample("proj_down", window=w, H=h,
                                                                H_out=h_next),
                             skip="identity", long_skip_to=13 - k, stage="encoder"))
    for _ in range(2):
        layers.append(_layer("pw_bottleneck", 256, N=256, skip="identity", stage="middle"))
    h_prev = 256
    for v, h, n, m, w, _ in reversed(encoder):
        layers.append(_layer(v, h, N=n, M=m, resample=Resample("proj_up", factor=w, H=h_prev,
                                                                H_out=h),
                             skip="identity", stage="decoder"))
        h_prev = h
    layers.append(_layer("full", 1, N=16, skip="identity", stage="output"))
    layers.append(_layer("full", 1, N=16, skip="identity", activation=False, stage="output"))
    return NetworkConfig(16000, tuple(layers), None, None, "dns_hourglass")


def _asr_backbone():
    # (variant, H, H_next, N, M, window, repeats)
    backbone = [("full", 1, 16, 64, 1, 5, 1), ("full", 16, 32, 4, 1, 4, 1),
                ("bottleneck", 32, 64, 128, 4, 2, 2), ("bottleneck", 64, 128, 256, 4, 2, 2),
                ("pw_bottleneck", 128, 256, 512, 1, 2, 2),
                ("pw_bottleneck", 256, 512, 1024, 1, 2, 4)]
    head = [("pw_bottleneck", 512, 512, 1024, 1, 4, 1), ("pw_bottleneck", 512, 512, 1024, 1, 2, 1),
            ("pw_bottleneck", 512, 512, 1024, 1, 1, 4)]
    layers = []
    for stage, rows in (("backbone", backbone), ("head", head)):
        for v, h, h_next, n, m, w, reps in rows:
            for r in range(reps):
                if r == 0 and w > 1:
                    rs = Resample("proj_down", window=w, H=h, H_out=h_next)
                    layers.append(_layer(v, h, N=n, M=m, resample=rs, skip="identity",
                                         stage=stage))
                else:
                    layers.append(_layer(v, h_next, N=n, M=m, skip="identity", stage=stage))
    return NetworkConfig(16000, tuple(layers), None, None, "asr_backbone")


PRESETS = {
    "kws_hybrid_small": lambda: _kws_hybrid([2, 4, 8, 16, 32, 64], [4, 4, 16, 32, 64, 128], 35,
                                            "kws_hybrid_small"),
    "kws_hybrid_mid": lambda: _kws_hybrid([4, 8, 16, 32, 64, 128], [4, 4, 32, 64, 128, 256], 35,
                                          "kws_hybrid_mid"),
    "kws_hybrid_large": lambda: _kws_hybrid([8, 16, 32, 64, 128, 256],
                                            [4, 4, 64, 128, 256, 512], 10, "kws_hybrid_large"),
    "dns_hourglass": _dns_hourglass,
    "asr_backbone": _asr_backbone,
}


def preset(name: str) -> NetworkConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    config = PRESETS[name]()
    errors = []
    _check_chain(config, errors)
    assert not errors, errors
    return config


def golden_preset_text(name: str) -> str:
    """The checked-in JSON file for preset ``name``."""
    return resources.files("ssmnet").joinpath("presets", f"{name}.json").read_text("utf-8")


# ---------------------------------------------------------------- weights

@dataclass(frozen=True)
class LayerWeights:
    ssm: SsmParams
    skip: np.ndarray | None = None          # (H_out, H)
    resample: np.ndarray | None = None      # proj_down: (H_out, H, window); proj_up: (H_out, H, factor)
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None


@dataclass(frozen=True)
class Network:
    config: NetworkConfig
    weights: tuple[LayerWeights, ...]
    head: tuple[np.ndarray, np.ndarray] | None = None

    def checksum(self) -> str:
        h = hashlib.sha256()
        arrays = []
        for w in self.weights:
            arrays += list(w.ssm.arrays().values())
            arrays += [a for a in (w.skip, w.resample, w.gamma, w.beta) if a is not None]
        arrays += list(self.head or ())
        for a in arrays:
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def _uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_network(config: NetworkConfig, seed: int = 0) -> Network:
    """Initialize every layer deterministically from ``seed``. LayerNorm
    affines start at the identity (unit scale, zero offset)."""
    rng = np.random.default_rng(seed)
    weights = []
    for layer in config.layers:
        spec = layer.block
        ssm = init_params(spec, rng)
        skip = _uniform(rng, (spec.H_out, spec.H), spec.H) if layer.skip == "projection" else None
        rs = layer.resample
        res = None
        if rs.kind == "proj_down":
            res = _uniform(rng, (rs.H_out, rs.H, rs.window), rs.H * rs.window)
        elif rs.kind == "proj_up":
            res = _uniform(rng, (rs.H_out, rs.H, rs.factor), rs.H)
        gamma = beta = None
        if layer.norm:
            gamma, beta = np.ones(spec.H_out), np.zeros(spec.H_out)
        weights.append(LayerWeights(ssm, skip, res, gamma, beta))
    head = None
    if config.head is not None:
        c = config.out_channels
        head = (_uniform(rng, (config.head.hidden, c), c),
                _uniform(rng, (config.head.classes, config.head.hidden), config.head.hidden))
    return Network(config, tuple(weights), head)


# ---------------------------------------------------------------- offline

def _layer_norm(x, gamma, beta, axis):
    mean = x.mean(axis=axis, keepdims=True)
    var = x.var(axis=axis, keepdims=True)
    y = (x - mean) / np.sqrt(var + LAYER_NORM_EPS)
    shape = [1] * x.ndim
    shape[axis] = -1
    return y * gamma.reshape(shape) + beta.reshape(shape)


def _silu(x):
    return x * expit(x)


def _block_tail(layer: LayerConfig, w: LayerWeights, y, x_in, axis):
    """Norm, skip merge and activation around the SSM output ``y``."""
    if layer.norm:
        y = _layer_norm(y, w.gamma, w.beta, axis)
    if layer.skip == "identity":
        y = y + x_in
    elif layer.skip == "projection":
        y = y + np.moveaxis(np.tensordot(w.skip, np.moveaxis(x_in, axis, 0), axes=1), 0, axis)
    if layer.activation:
        y = _silu(y)
    return y


def forward_offline(net: Network, u) -> np.ndarray:
    """Run the whole network on ``u`` of shape (batch, channels, L) using
    planned FFT convolutions; returns the features before any head."""
    x = np.asarray(u, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != net.config.in_channels:
        raise ValueError(f"input must be (batch, {net.config.in_channels}, L), got {x.shape}")
    pending = {}
    for k, (layer, w) in enumerate(zip(net.config.layers, net.weights)):
        rs = layer.resample
        b, _, L = x.shape
        if rs.kind == "proj_up":
            # out[b, j, s*f + r] = sum_i W[j, i, r] x[b, i, s]
            x = np.einsum("jir,bis->bjsr", w.resample, x).reshape(b, rs.H_out, L * rs.factor)
        if k in pending:
            x = x + pending.pop(k)
        y = forward_fft(layer.block, w.ssm, x)
        y = _block_tail(layer, w, y, x, axis=1)
        if layer.long_skip_to is not None:
            pending[layer.long_skip_to] = y
        if rs.kind in ("pool", "proj_down"):
            L = y.shape[-1]
            if L % rs.window:
                raise ValueError(f"layer {k}: length {L} not divisible by window {rs.window}")
            frames = y.reshape(b, y.shape[1], L // rs.window, rs.window)
            if rs.kind == "pool":
                y = frames.mean(axis=-1)
            else:
                y = np.einsum("jiw,bisw->bjs", w.resample, frames)
        x = y
    return x


def apply_head(net: Network, features) -> np.ndarray:
    """Global average pool over time, then the 2-layer MLP; returns logits."""
    if net.head is None:
        raise ValueError("network has no head")
    W1, W2 = net.head
    g = np.asarray(features).mean(axis=-1)
    return _silu(g @ W1.T) @ W2.T


# ---------------------------------------------------------------- streaming

class _StreamLayer:
    def __init__(self, layer: LayerConfig, w: LayerWeights, batch: int):
        self.layer = layer
        self.w = w
        self.ops = prepare(layer.block, w.ssm)
        self.x = init_state(layer.block, batch).x
        self.buffer = []

    def ssm(self, x_t, skip_fifo):
        if skip_fifo is not None:
            x_t = x_t + skip_fifo.popleft()
        y, self.x = _step(self.ops, self.x, x_t)
        return _block_tail(self.layer, self.w, y, x_t, axis=1), x_t

    def push(self, x_t, skip_in, skip_out):
        """Consume one input vector (batch, channels); return output vectors."""
        rs = self.layer.resample
        if rs.kind == "proj_up":
            inputs = [np.einsum("ji,bi->bj", self.w.resample[:, :, r], x_t)
                      for r in range(rs.factor)]
        else:
            inputs = [x_t]
        outs = []
        for v in inputs:
            y, _ = self.ssm(v, skip_in)
            if skip_out is not None:
                skip_out.append(y)
            if rs.kind in ("pool", "proj_down"):
                self.buffer.append(y)
                if len(self.buffer) == rs.window:
                    frame = np.stack(self.buffer, axis=-1)
                    self.buffer = []
                    if rs.kind == "pool":
                        outs.append(frame.mean(axis=-1))
                    else:
                        outs.append(np.einsum("jiw,biw->bj", self.w.resample, frame))
            else:
                outs.append(y)
        return outs


def forward_stream(net: Network, u) -> np.ndarray:
    """Sample-by-sample evaluation with explicit recurrent states, streaming
    pooling / projections and FIFO queues for long skips. Matches
    :func:`forward_offline` up to rounding."""
    u = np.asarray(u, dtype=np.float64)
    batch, _, L = u.shape
    layers = [_StreamLayer(l, w, batch) for l, w in zip(net.config.layers, net.weights)]
    fifos = {l.long_skip_to: collections.deque() for l in net.config.layers
             if l.long_skip_to is not None}
    outputs = []

    def feed(k, x_t):
        if k == len(layers):
            outputs.append(x_t)
            return
        layer = net.config.layers[k]
        skip_out = fifos.get(layer.long_skip_to) if layer.long_skip_to is not None else None
        for y in layers[k].push(x_t, fifos.get(k), skip_out):
            feed(k + 1, y)

    for t in range(L):
        feed(0, u[:, :, t])
    out_len = L * net.config.rate_factor()
    if outputs:
        y = np.stack(outputs, axis=-1)
    else:
        y = np.zeros((batch, net.config.out_channels, 0))
    assert out_len.denominator != 1 or y.shape[-1] == int(out_len)
    return y


# ---------------------------------------------------------------- counting

@dataclass(frozen=True)
class CountItem:
    layer: int | None
    part: str
    params: int
    flops_per_step: int
    rate_hz: float

    @property
    def flops_per_second(self) -> float:
        return self.flops_per_step * self.rate_hz


@dataclass(frozen=True)
class NetworkCount:
    items: tuple[CountItem, ...]

    @property
    def total_params(self) -> int:
        return sum(i.params for i in self.items)

    @property
    def flops_per_second(self) -> float:
        return sum(i.flops_per_second for i in self.items)

    def per_layer(self) -> list[dict]:
        rows = collections.OrderedDict()
        for it in self.items:
            key = "head" if it.layer is None else it.layer
            row = rows.setdefault(key, {"layer": key, "params": 0, "flops_per_second": 0.0})
            row["params"] += it.params
            row["flops_per_second"] += it.flops_per_second
        return list(rows.values())

    def to_dict(self) -> dict:
        return {"total_params": self.total_params,
                "flops_per_second": self.flops_per_second,
                "layers": self.per_layer(),
                "items": [{"layer": i.layer, "part": i.part, "params": i.params,
                           "flops_per_step": i.flops_per_step, "rate_hz": i.rate_hz,
                           "flops_per_second": i.flops_per_second} for i in self.items]}


def count_network(config: NetworkConfig) -> NetworkCount:
    """Inference parameters and FLOPs per second of the whole network.

    Every component is charged per step at its own sample rate: the input
    rate divided by the downsampling accumulated before it (times any
    upsampling). Downsampling projections run at their output rate,
    upsampling projections at their input rate. The classification head
    runs once per clip. Biases and norm affines are not counted.
    """
    items = []
    rate = Fraction(config.sample_rate_hz)
    for k, layer in enumerate(config.layers):
        rs = layer.resample
        spec = layer.block
        if rs.kind == "proj_up":
            n = rs.factor * rs.H * rs.H_out
            items.append(CountItem(k, "proj_up", n, 2 * n, float(rate)))
            rate *= rs.factor
        if any(l.long_skip_to == k for l in config.layers):
            items.append(CountItem(k, "long_skip_add", 0, spec.H, float(rate)))
        cost = count_inference(spec)
        items.append(CountItem(k, f"ssm:{cost.formula_tag}", cost.params, cost.flops_per_step,
                               float(rate)))
        if layer.skip != "none":
            tag = "residual_projection" if layer.skip == "projection" else "residual_identity"
            c = count_inference(tag, H=spec.H, H_out=spec.H_out)
            items.append(CountItem(k, tag, c.params, c.flops_per_step, float(rate)))
        if rs.kind == "pool":
            rate /= rs.window
        elif rs.kind == "proj_down":
            rate /= rs.window
            n = rs.window * rs.H * rs.H_out
            items.append(CountItem(k, "proj_down", n, 2 * n, float(rate)))
    if config.head is not None:
        h = config.head
        c = config.out_channels
        n = c * h.hidden + h.hidden * h.classes
        items.append(CountItem(None, "head:gap_mlp", n, 2 * n, 1.0 / h.clip_seconds))
    return NetworkCount(tuple(items))

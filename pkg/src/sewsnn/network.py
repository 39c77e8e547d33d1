"""Architecture strings, network assembly, zero initialization.

Grammar (tokens joined by ``-``)::

    arch    := item ( "-" item )*
    item    := token | "{" arch "}" "*" INT
    token   := "c" INT "k" INT "s" INT          convolution (padding k//2, no bias)
             | "BN"                            batch normalization
             | "IF" | "LIF" | "PLIF"           spiking neuron layer
             | KIND " Block" [ "(" opts ")" ]  residual block, KIND in SEW|Basic|Plain
             | "MPk" INT "s" INT               max pooling
             | "APk" INT "s" INT               average pooling
             | "FC" INT                        fully connected (flattens its input)
             | "DP"                            dropout, p = 0.5
    opts    := opt ( "," opt )*
    opt     := "c" INT | "ADD" | "AND" | "IAND" | "s" INT | "ds"

A block without ``c`` keeps its input width; ``s2`` (or ``ds`` for a width
change without striding) marks a downsample block.  Blocks after a 1-D
feature vector use the fully connected residual branch.  Block neurons take
the kind of the closest preceding neuron token.  A trailing ``FC`` is the
classifier head, applied per time-step and averaged over time.

Example: ``c32k3s1-BN-PLIF-{SEW Block (c32)-MPk2s2}*7-FC11``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .blocks import Block, BlockSpec, configure_identity, make_block
from .errors import ArchParseError, ConfigurationError, DimensionError
from .layers import AvgPool, BatchNorm, Conv2d, Dropout, Linear, MaxPool, Module
from .neuron import NeuronLayer, NeuronSpec


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    stride: int


@dataclass(frozen=True)
class BNSpec:
    pass


@dataclass(frozen=True)
class NeuronToken:
    kind: str


@dataclass(frozen=True)
class PoolSpec:
    kind: str  # "MP" or "AP"
    kernel: int
    stride: int


@dataclass(frozen=True)
class FCSpec:
    out_features: int


@dataclass(frozen=True)
class DropoutSpec:
    p: float = 0.5


@dataclass(frozen=True)
class NetworkSpec:
    arch: str
    layers: tuple
    input_shape: tuple
    T: int = 4
    neuron: NeuronSpec = field(default_factory=NeuronSpec)
    g: str = "ADD"

    @property
    def blocks(self):
        return [layer for layer in self.layers if isinstance(layer, BlockSpec)]

    @property
    def has_head(self):
        return bool(self.layers) and isinstance(self.layers[-1], FCSpec)

    @property
    def stem(self):
        out = []
        for layer in self.layers:
            if isinstance(layer, BlockSpec):
                break
            out.append(layer)
        return out

    @property
    def head(self):
        return self.layers[-1] if self.has_head else None


def _token_str(spec):
    if isinstance(spec, ConvSpec):
        return f"c{spec.out_channels}k{spec.kernel}s{spec.stride}"
    if isinstance(spec, BNSpec):
        return "BN"
    if isinstance(spec, NeuronToken):
        return spec.kind
    if isinstance(spec, PoolSpec):
        return f"{spec.kind}k{spec.kernel}s{spec.stride}"
    if isinstance(spec, FCSpec):
        return f"FC{spec.out_features}"
    if isinstance(spec, DropoutSpec):
        return "DP"
    opts = [f"c{spec.out_channels}"]
    if spec.g:
        opts.append(spec.g)
    if spec.stride != 1:
        opts.append(f"s{spec.stride}")
    elif spec.downsample:
        opts.append("ds")
    return f"{spec.kind} Block ({', '.join(opts)})"


def canonical(layers):
    """Fully expanded architecture string for a layer list."""
    if isinstance(layers, NetworkSpec):
        layers = layers.layers
    return "-".join(_token_str(layer) for layer in layers)


# --- parsing ---------------------------------------------------------------

_CONV = re.compile(r"c(\d+)k(\d+)s(\d+)")
_POOL = re.compile(r"(MP|AP)k(\d+)s(\d+)")
_FC = re.compile(r"FC(\d+)")
_BLOCK = re.compile(r"(SEW|Basic|Plain) Block")
_NEURON = re.compile(r"PLIF|LIF|IF")
_INT = re.compile(r"\d+")


@dataclass
class _RawBlock:
    kind: str
    channels: int | None
    g: str | None
    stride: int
    ds: bool
    pos: int


class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def fail(self, message, pos=None):
        raise ArchParseError(message, self.pos if pos is None else pos)

    def parse(self):
        items = self.sequence()
        if self.pos != len(self.text):
            self.fail(f"unexpected {self.text[self.pos]!r}")
        return items

    def sequence(self):
        items = list(self.item())
        while self.pos < len(self.text) and self.text[self.pos] == "-":
            self.pos += 1
            items.extend(self.item())
        return items

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] == " ":
            self.pos += 1

    def item(self):
        self.skip_ws()
        start = self.pos
        if self.pos < len(self.text) and self.text[self.pos] == "{":
            self.pos += 1
            inner = self.sequence()
            self.skip_ws()
            if self.text[self.pos : self.pos + 2] != "}*":
                self.fail("expected '}*' closing a repeat group")
            self.pos += 2
            m = _INT.match(self.text, self.pos)
            if not m:
                self.fail("expected repeat count after '}*'")
            count = int(m.group())
            if count < 1:
                self.fail("repeat count must be >= 1", m.start())
            self.pos = m.end()
            self.skip_ws()
            return [tok for _ in range(count) for tok in inner]
        tok = self.token()
        if tok is None:
            self.fail("unknown token", start)
        self.skip_ws()
        if self.pos < len(self.text) and self.text[self.pos] not in "-}":
            self.fail(f"unexpected {self.text[self.pos]!r} after token")
        return [tok]

    def token(self):
        text, pos = self.text, self.pos
        for pattern, build in (
            (_CONV, lambda m: ConvSpec(int(m[1]), int(m[2]), int(m[3]))),
            (_POOL, lambda m: PoolSpec(m[1], int(m[2]), int(m[3]))),
            (_FC, lambda m: FCSpec(int(m[1]))),
        ):
            m = pattern.match(text, pos)
            if m:
                self.pos = m.end()
                return (build(m), pos)
        if text.startswith("BN", pos):
            self.pos += 2
            return (BNSpec(), pos)
        if text.startswith("DP", pos):
            self.pos += 2
            return (DropoutSpec(), pos)
        m = _BLOCK.match(text, pos)
        if m:
            self.pos = m.end()
            return (self.block_options(m[1], pos), pos)
        m = _NEURON.match(text, pos)
        if m:
            self.pos = m.end()
            return (NeuronToken(m.group()), pos)
        return None

    def block_options(self, kind, start):
        raw = _RawBlock(kind, None, None, 1, False, start)
        self.skip_ws()
        if self.pos >= len(self.text) or self.text[self.pos] != "(":
            return raw
        close = self.text.find(")", self.pos)
        if close < 0:
            self.fail("unterminated block options")
        offset = self.pos + 1
        for chunk in self.text[offset:close].split(","):
            opt = chunk.strip()
            opt_pos = offset + len(chunk) - len(chunk.lstrip())
            offset += len(chunk) + 1
            if re.fullmatch(r"c\d+", opt):
                raw.channels = int(opt[1:])
            elif opt in ("ADD", "AND", "IAND"):
                if kind != "SEW":
                    self.fail(f"{kind} Block takes no element-wise function", opt_pos)
                raw.g = opt
            elif re.fullmatch(r"s\d+", opt):
                raw.stride = int(opt[1:])
                if raw.stride < 1:
                    self.fail("stride must be >= 1", opt_pos)
            elif opt == "ds":
                raw.ds = True
            else:
                self.fail(f"unknown block option {opt!r}", opt_pos)
        self.pos = close + 1
        return raw


def _conv_out(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def parse_arch(text, input_shape, T=4, neuron=None, g="ADD"):
    """Parse and shape-check an architecture string.

    ``input_shape`` is (C, H, W) for frames or (D,) for feature vectors.
    SEW blocks without an explicit g use ``g``.
    """
    neuron = neuron or NeuronSpec()
    if T < 1:
        raise ConfigurationError("T must be >= 1", key="T")
    items = _Parser(text).parse()
    shape = tuple(int(n) for n in input_shape)
    layers = []
    for tok, pos in items:
        if isinstance(tok, _RawBlock):
            linear = len(shape) == 1
            in_ch = shape[0]
            out_ch = tok.channels if tok.channels is not None else in_ch
            downsample = tok.ds or tok.stride > 1
            if linear and tok.stride != 1:
                raise ArchParseError("blocks on 1-D features cannot stride", pos)
            if not downsample and out_ch != in_ch:
                raise ArchParseError(
                    f"{tok.kind} Block (c{out_ch}) receives {in_ch} channels; mark it 's2' or 'ds' to downsample",
                    pos,
                )
            gfun = (tok.g or g) if tok.kind == "SEW" else None
            spec = BlockSpec(tok.kind, in_ch, out_ch, gfun, tok.stride, downsample, linear)
            if not linear:
                h = _conv_out(shape[1], 3, tok.stride, 1)
                w = _conv_out(shape[2], 3, tok.stride, 1)
                shape = (out_ch, h, w)
            else:
                shape = (out_ch,)
            layers.append(spec)
            continue
        if isinstance(tok, ConvSpec):
            if len(shape) != 3:
                raise ArchParseError(f"convolution needs (C, H, W) input, got {shape}", pos)
            p = tok.kernel // 2
            h, w = _conv_out(shape[1], tok.kernel, tok.stride, p), _conv_out(shape[2], tok.kernel, tok.stride, p)
            if h < 1 or w < 1:
                raise ArchParseError(f"convolution output would be empty for input {shape}", pos)
            shape = (tok.out_channels, h, w)
        elif isinstance(tok, PoolSpec):
            if len(shape) != 3:
                raise ArchParseError(f"pooling needs (C, H, W) input, got {shape}", pos)
            h, w = _conv_out(shape[1], tok.kernel, tok.stride, 0), _conv_out(shape[2], tok.kernel, tok.stride, 0)
            if h < 1 or w < 1:
                raise ArchParseError(f"pooling kernel {tok.kernel} too large for input {shape}", pos)
            shape = (shape[0], h, w)
        elif isinstance(tok, FCSpec):
            shape = (tok.out_features,)
        layers.append(tok)
    layers = tuple(layers)
    return NetworkSpec(canonical(layers), layers, tuple(int(n) for n in input_shape), T, neuron, g)


def output_shape(spec):
    """Per-sample shape produced by the last layer."""
    shape = spec.input_shape
    for layer in spec.layers:
        if isinstance(layer, BlockSpec):
            if layer.linear:
                shape = (layer.out_channels,)
            else:
                shape = (layer.out_channels, _conv_out(shape[1], 3, layer.stride, 1), _conv_out(shape[2], 3, layer.stride, 1))
        elif isinstance(layer, ConvSpec):
            p = layer.kernel // 2
            shape = (layer.out_channels, _conv_out(shape[1], layer.kernel, layer.stride, p), _conv_out(shape[2], layer.kernel, layer.stride, p))
        elif isinstance(layer, PoolSpec):
            shape = (shape[0], _conv_out(shape[1], layer.kernel, layer.stride, 0), _conv_out(shape[2], layer.kernel, layer.stride, 0))
        elif isinstance(layer, FCSpec):
            shape = (layer.out_features,)
    return shape


# --- models ----------------------------------------------------------------


@dataclass
class BlockRecord:
    """Activations captured at one block boundary during a forward pass."""

    index: int
    downsample: bool
    kind: str
    g: str | None
    s_in: ad.Tensor
    a: ad.Tensor
    o: ad.Tensor


class Model(Module):
    """A network built from a NetworkSpec.

    ``decode`` is ``"logits"`` (time-averaged head outputs) or ``"spikes"``
    (the head drives an IF layer and its time-averaged spike counts are used).
    """

    def __init__(self, spec, layers, head=None, decode="logits"):
        if decode not in ("logits", "spikes"):
            raise ConfigurationError(f"unknown decode {decode!r}", key="decode")
        self.spec = spec
        self.layers = list(layers)
        self.head = head
        self.decode = decode
        self.head_neuron = NeuronLayer(replace(spec.neuron, kind="IF")) if decode == "spikes" else None
        self.records = []

    @property
    def blocks(self):
        return [layer for layer in self.layers if isinstance(layer, Block)]

    def _check_input(self, x):
        x = ad.as_tensor(x)
        expected = tuple(self.spec.input_shape)
        if x.ndim != len(expected) + 2 or tuple(x.shape[2:]) != expected:
            raise DimensionError(f"expected input (T, B) + {expected}, got {x.shape}")
        return x

    def features(self, x, capture=False):
        """Run everything except the head; returns the (T, B, ...) sequence."""
        h = self._check_input(x)
        if capture and not h.requires_grad:
            h = ad.Tensor(h.data, requires_grad=True)
        self.records = []
        for layer in self.layers:
            if isinstance(layer, Block):
                if capture:
                    h.retain_grad()
                    o, a = layer.forward_detail(h)
                    self.records.append(
                        BlockRecord(len(self.records), layer.downsample, layer.spec.kind, layer.spec.g, h, a, o)
                    )
                    h = o
                else:
                    h = layer(h)
            else:
                h = layer(h)
        return h

    def forward(self, x, capture=False):
        """Logits (B, classes) for models with a head, else the output sequence."""
        h = self.features(x, capture)
        if self.head is None:
            return h
        out = self.head(h)
        if self.head_neuron is not None:
            out = self.head_neuron(out)
        return ad.mean(out, axis=0)

    def parameter_counts(self):
        """(canonical token, parameter count) for each top-level layer."""
        counts = []
        tokens = list(self.spec.layers)
        modules = self.layers + ([self.head] if self.head is not None else [])
        for tok, mod in zip(tokens, modules):
            counts.append((_token_str(tok), mod.num_parameters() if mod is not None else 0))
        return counts


def build(spec, seed=0, decode="logits"):
    """Instantiate a model with parameters drawn deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    shape = spec.input_shape
    neuron = spec.neuron
    layers = []
    head = None
    last = len(spec.layers) - 1
    for i, tok in enumerate(spec.layers):
        if isinstance(tok, ConvSpec):
            layers.append(Conv2d(shape[0], tok.out_channels, tok.kernel, tok.stride, rng=rng))
        elif isinstance(tok, BNSpec):
            layers.append(BatchNorm(shape[0]))
        elif isinstance(tok, NeuronToken):
            neuron = replace(spec.neuron, kind=tok.kind)
            layers.append(NeuronLayer(neuron))
        elif isinstance(tok, BlockSpec):
            layers.append(make_block(tok, neuron, rng))
        elif isinstance(tok, PoolSpec):
            layers.append((MaxPool if tok.kind == "MP" else AvgPool)(tok.kernel, tok.stride))
        elif isinstance(tok, FCSpec):
            fc = Linear(int(np.prod(shape)), tok.out_features, bias=True, rng=rng)
            if i == last:
                head = fc
            else:
                layers.append(fc)
        elif isinstance(tok, DropoutSpec):
            layers.append(Dropout(tok.p, rng=np.random.default_rng(rng.integers(2**63))))
        shape = output_shape(replace(spec, layers=spec.layers[: i + 1]))
    return Model(spec, layers, head, decode)


def zero_init(model):
    """Make every non-downsample residual block an identity map."""
    for block in model.blocks:
        if block.downsample or block.spec.kind == "Plain":
            continue
        configure_identity(block)
    return model


def repeat_static(images, T):
    """Direct encoding: repeat (B, ...) static inputs T times along a new time axis."""
    images = np.asarray(images, dtype=np.float64)
    return np.broadcast_to(images, (T,) + images.shape).copy()

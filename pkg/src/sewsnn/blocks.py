"""Plain, spiking-basic and SEW residual blocks.

All blocks map a (T, B, ...) spike sequence ``S`` to an output sequence
``O``.  The residual branch is ``Conv-BN-SN-Conv-BN`` (or the Linear
equivalent for 1-D features) and the block variants differ in how it is
combined with the input:

    plain          O = SN(F(S))
    spiking-basic  O = SN(F(S) + S)
    SEW            O = g(SN(F(S)), S),   g in {ADD, AND, IAND}

Downsample blocks replace the identity shortcut with Conv1x1-BN (plus an SN
for SEW) at the block stride.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DimensionError, DomainError
from .layers import BatchNorm, Conv2d, Linear, Module, Sequential
from .neuron import NeuronLayer

BLOCK_KINDS = ("Plain", "Basic", "SEW")
G_FUNCTIONS = ("ADD", "AND", "IAND")


@dataclass(frozen=True)
class BlockSpec:
    """Shape-level description of one block.

    ``linear`` selects the fully connected residual branch for 1-D features.
    """

    kind: str
    in_channels: int
    out_channels: int
    g: str | None = None
    stride: int = 1
    downsample: bool = False
    linear: bool = False

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ConfigurationError(f"unknown block kind {self.kind!r}")
        if self.kind == "SEW" and self.g not in G_FUNCTIONS:
            raise ConfigurationError(f"SEW block needs g in {G_FUNCTIONS}, got {self.g!r}")
        if self.kind != "SEW" and self.g is not None:
            raise ConfigurationError(f"{self.kind} block takes no element-wise function")
        if self.linear and self.stride != 1:
            raise ConfigurationError("linear blocks cannot stride")
        if not self.downsample and (self.stride != 1 or self.in_channels != self.out_channels):
            raise ConfigurationError(
                f"{self.kind} block changes shape ({self.in_channels}->{self.out_channels}, "
                f"stride {self.stride}) but is not a downsample block"
            )


def _is_binary(x):
    return bool(np.all((x == 0) | (x == 1)))


def elementwise_g(g, a, s):
    """Combine the residual spikes ``a`` with the shortcut ``s``.

    ADD: a + s, AND: a * s, IAND: (1 - a) * s.  ``a`` must be binary; ``s``
    must be binary for AND/IAND and a non-negative integer count for ADD,
    since stacked ADD blocks pass counts up to k + 1 downstream.
    """
    a, s = ad.as_tensor(a), ad.as_tensor(s)
    if a.shape != s.shape:
        raise DimensionError(f"g: shapes {a.shape} and {s.shape} differ")
    if not _is_binary(a.data):
        raise DomainError("g: residual spikes must be binary")
    if g == "ADD":
        if np.any(s.data < 0) or np.any(s.data != np.round(s.data)):
            raise DomainError("ADD: shortcut input must be non-negative integers")
        return ad.add(a, s)
    if not _is_binary(s.data):
        raise DomainError(f"{g}: shortcut input must be binary")
    if g == "AND":
        return ad.mul(a, s)
    if g == "IAND":
        return ad.mul(ad.sub(1.0, a), s)
    raise ConfigurationError(f"unknown element-wise function {g!r}")


def _residual_branch(spec, neuron, rng):
    if spec.linear:
        return Sequential(
            Linear(spec.in_channels, spec.out_channels, bias=False, rng=rng),
            BatchNorm(spec.out_channels),
            NeuronLayer(neuron),
            Linear(spec.out_channels, spec.out_channels, bias=False, rng=rng),
            BatchNorm(spec.out_channels),
        )
    return Sequential(
        Conv2d(spec.in_channels, spec.out_channels, 3, spec.stride, rng=rng),
        BatchNorm(spec.out_channels),
        NeuronLayer(neuron),
        Conv2d(spec.out_channels, spec.out_channels, 3, 1, rng=rng),
        BatchNorm(spec.out_channels),
    )


def _shortcut(spec, neuron, rng):
    if spec.linear:
        layers = [Linear(spec.in_channels, spec.out_channels, bias=False, rng=rng), BatchNorm(spec.out_channels)]
    else:
        layers = [
            Conv2d(spec.in_channels, spec.out_channels, 1, spec.stride, padding=0, rng=rng),
            BatchNorm(spec.out_channels),
        ]
    if spec.kind == "SEW":
        layers.append(NeuronLayer(neuron))
    return Sequential(*layers)


class Block(Module):
    """Common plumbing; subclasses implement ``forward_detail``."""

    def __init__(self, spec, neuron, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        self.residual = _residual_branch(spec, neuron, rng)
        self.out_neuron = NeuronLayer(neuron)
        self.shortcut = _shortcut(spec, neuron, rng) if spec.downsample and spec.kind != "Plain" else None

    @property
    def downsample(self):
        return self.spec.downsample

    @property
    def last_bn(self):
        return self.residual[-1]

    def forward(self, s):
        return self.forward_detail(s)[0]

    def forward_detail(self, s):
        """Return ``(O, A)`` where A is the spike output of the block's last SN."""
        raise NotImplementedError

    def _skip(self, s):
        return self.shortcut(s) if self.shortcut is not None else s


class PlainBlock(Block):
    def forward_detail(self, s):
        o = self.out_neuron(self.residual(s))
        return o, o


class SpikingBasicBlock(Block):
    def forward_detail(self, s):
        f = self.residual(s)
        skip = self._skip(s)
        if f.shape != skip.shape:
            raise DimensionError(f"residual output {f.shape} does not match shortcut {skip.shape}")
        o = self.out_neuron(ad.add(f, skip))
        return o, o


class SEWBlock(Block):
    def forward_detail(self, s):
        a = self.out_neuron(self.residual(s))
        skip = self._skip(s)
        if a.shape != skip.shape:
            raise DimensionError(f"residual output {a.shape} does not match shortcut {skip.shape}")
        return elementwise_g(self.spec.g, a, skip), a


_BLOCK_CLASSES = {"Plain": PlainBlock, "Basic": SpikingBasicBlock, "SEW": SEWBlock}


def make_block(spec, neuron, rng=None):
    return _BLOCK_CLASSES[spec.kind](spec, neuron, rng)


def configure_identity(block):
    """Zero the last batch norm of the residual branch so the block is an identity.

    ADD/IAND and spiking-basic: scale = shift = 0, so F(S) = 0 (and A = 0).
    AND: scale = 0, shift = V_th, so an IF output neuron spikes every step (A = 1).
    """
    if block.downsample:
        raise ConfigurationError("downsample blocks have no identity configuration")
    if isinstance(block, PlainBlock):
        raise ConfigurationError("plain blocks have no shortcut and cannot be an identity")
    and_gate = isinstance(block, SEWBlock) and block.spec.g == "AND"
    nspec = block.out_neuron.spec
    if and_gate and nspec.kind != "IF":
        raise ConfigurationError(
            f"AND identity needs IF output neurons to guarantee a spike every step, got {nspec.kind}"
        )
    bn = block.last_bn
    bn.weight.data[...] = 0.0
    bn.bias.data[...] = nspec.v_threshold if and_gate else 0.0

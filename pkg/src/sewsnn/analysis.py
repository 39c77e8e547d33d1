"""Firing-rate and gradient-amplitude diagnostics plus closed-form gradient oracles.

For a chain of identity-configured blocks the gradient of the last output
with respect to the first input is a product of per-block factors:

* spiking-basic blocks with IF neurons contribute ``sigma'(s - V_th)`` where
  ``s`` is the (binary) spike passing through, so spikes see
  ``sigma'(1 - V_th)**k`` and silences ``sigma'(0 - V_th)**k``;
* SEW blocks contribute exactly 1 for every g.

Summed over N neurons and T steps with firing rate ``phi``, the norm of the
product is ``sqrt(N T phi a**2k + N T (1 - phi) b**2k)`` with
``a = sigma'(1 - V_th)`` and ``b = sigma'(0 - V_th)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import DomainError
from .network import build, parse_arch, zero_init
from .neuron import NeuronSpec


def firing_rate(s_seq, require_binary=True):
    """Mean of a spike tensor over all neurons and time-steps."""
    s = s_seq.data if isinstance(s_seq, ad.Tensor) else np.asarray(s_seq, dtype=np.float64)
    if require_binary and not np.all((s == 0) | (s == 1)):
        raise DomainError("firing rate requested for non-binary values")
    return float(s.mean()) if s.size else 0.0


@dataclass
class FiringRateTrace:
    block_index: list = field(default_factory=list)
    is_downsample: list = field(default_factory=list)
    a_rate: list = field(default_factory=list)
    o_rate: list = field(default_factory=list)

    HEADER = ("block_index", "is_downsample", "a_rate", "o_rate")

    def rows(self):
        return [
            (i, int(d), a, o) for i, d, a, o in zip(self.block_index, self.is_downsample, self.a_rate, self.o_rate)
        ]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.HEADER)
            writer.writerows(self.rows())


@dataclass
class GradientTrace:
    block_index: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)

    HEADER = ("block_index", "grad_norm")

    def rows(self):
        return list(zip(self.block_index, self.grad_norm))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.HEADER)
            writer.writerows(self.rows())

    def spread(self):
        """max / min of the trace (inf when some block has zero gradient)."""
        g = np.asarray(self.grad_norm, dtype=np.float64)
        return float(g.max() / g.min()) if g.min() > 0 else math.inf

    def trend(self, flat_factor=4.0):
        """``flat`` when the trace varies less than ``flat_factor``; otherwise
        ``exploding`` if the norm grows toward shallow blocks, ``vanishing`` if
        it shrinks toward them (sign of the log-linear slope over block index)."""
        if self.spread() < flat_factor:
            return "flat"
        g = np.log(np.maximum(np.asarray(self.grad_norm, dtype=np.float64), 1e-300))
        slope = np.polyfit(np.asarray(self.block_index, dtype=np.float64), g, 1)[0]
        return "vanishing" if slope > 0 else "exploding"


def trace_firing_rates(model, x):
    """Per-block firing rate of A (the block's last SN) and mean value of O."""
    with ad.no_grad():
        model.features(x, capture=True)
    trace = FiringRateTrace()
    for rec in model.records:
        trace.block_index.append(rec.index)
        trace.is_downsample.append(rec.downsample)
        trace.a_rate.append(firing_rate(rec.a))
        trace.o_rate.append(firing_rate(rec.o, require_binary=False))
    return trace


def _loss(model, x, labels, loss):
    if loss == "ce":
        return ad.cross_entropy(model(x, capture=True), labels)
    return ad.sum(model.features(x, capture=True))


def block_input_grads(model, x, labels=None, loss="sum", isolate_time=False):
    """dL/dS^l for every block input, as a list of arrays shaped like S^l.

    ``loss="sum"`` uses the sum of the last block-stack output (head removed),
    so the upstream gradient is exactly 1.  ``isolate_time`` runs one pass per
    time-step t with ``L_t = sum(O[t])`` and keeps only the slice t of each
    gradient, i.e. the same-step derivatives dO[t]/dS[t] that the product
    formulas describe, without the temporal paths through membrane state.
    """
    if not isolate_time:
        model.zero_grad()
        _loss(model, x, labels, loss).backward()
        return [rec.s_in.grad if rec.s_in.grad is not None else np.zeros(rec.s_in.shape) for rec in model.records]
    T = np.shape(x)[0]
    grads = None
    for t in range(T):
        model.zero_grad()
        out = model.features(x, capture=True)
        ad.sum(out[t]).backward()
        if grads is None:
            grads = [np.zeros(rec.s_in.shape) for rec in model.records]
        for g, rec in zip(grads, model.records):
            if rec.s_in.grad is not None:
                g[t] = rec.s_in.grad[t]
    return grads


def trace_gradients(model, x, labels=None, loss="sum", isolate_time=False):
    """Euclidean norm of dL/dS^l per block, shallow to deep."""
    grads = block_input_grads(model, x, labels, loss, isolate_time)
    return GradientTrace(list(range(len(grads))), [float(np.linalg.norm(g)) for g in grads])


# --- oracles ---------------------------------------------------------------


def oracle_grad_product_spiking(surrogate, v_th, s_path):
    """prod_i sigma'(s_i - V_th) along a path of block inputs (axis 0 = block)."""
    s = np.asarray(s_path, dtype=np.float64)
    return np.prod(surrogate.derivative(s - v_th), axis=0)


def oracle_grad_product_sew(g):
    """Identity-configured SEW blocks pass gradient unchanged for every g."""
    if g not in ("ADD", "AND", "IAND"):
        raise ValueError(f"unknown element-wise function {g!r}")
    return 1.0


@dataclass(frozen=True)
class GradNormOracle:
    value: float
    regime: str
    limit: float


def grad_norm_regime(surrogate, v_th):
    """Which limit the product norm approaches as k grows."""
    a = float(surrogate.derivative(1.0 - v_th))
    b = float(surrogate.derivative(0.0 - v_th))
    one_a, one_b = math.isclose(a, 1.0, rel_tol=1e-12), math.isclose(b, 1.0, rel_tol=1e-12)
    if (a > 1 and not one_a) or (b > 1 and not one_b):
        return "exploding"
    if one_a and one_b:
        return "sqrt(NT)"
    if one_a:
        return "sqrt(NT*phi)"
    if one_b:
        return "sqrt(NT*(1-phi))"
    return "vanishing"


def oracle_grad_norm(phi, k, surrogate, v_th, N, T, upstream_norm=1.0):
    """Predicted ||dL/dS^l|| after k identity spiking-basic blocks.

    ``limit`` is the k -> infinity value of the same expression.
    """
    if not 0 <= phi <= 1:
        raise ValueError(f"firing rate must lie in [0, 1], got {phi}")
    a = float(surrogate.derivative(1.0 - v_th))
    b = float(surrogate.derivative(0.0 - v_th))
    nt = N * T
    value = upstream_norm * math.sqrt(nt * phi * a ** (2 * k) + nt * (1 - phi) * b ** (2 * k))
    regime = grad_norm_regime(surrogate, v_th)
    limit = {
        "exploding": math.inf,
        "vanishing": 0.0,
        "sqrt(NT)": math.sqrt(nt),
        "sqrt(NT*phi)": math.sqrt(nt * phi),
        "sqrt(NT*(1-phi))": math.sqrt(nt * (1 - phi)),
    }[regime]
    return GradNormOracle(value, regime, upstream_norm * limit)


# --- diagnostic chains -----------------------------------------------------


def chain_arch(kind, depth, width, g=None, downsample_every=0):
    """Headless fully connected chain ``{KIND Block (cW[, g])}*depth``.

    ``downsample_every > 0`` turns every such block into a ``ds`` block
    (same width, non-identity shortcut).
    """
    opts = f"c{width}" + (f", {g}" if kind == "SEW" else "")
    tokens = []
    for i in range(depth):
        ds = downsample_every > 0 and i > 0 and i % downsample_every == 0
        tokens.append(f"{kind} Block ({opts}{', ds' if ds else ''})")
    return "-".join(tokens)


def make_chain(kind, depth, width, g=None, neuron=None, T=4, seed=0, identity=True, downsample_every=0):
    """Build a diagnostic chain model on (width,) features."""
    neuron = neuron or NeuronSpec()
    spec = parse_arch(chain_arch(kind, depth, width, g, downsample_every), (width,), T=T, neuron=neuron)
    model = build(spec, seed)
    if identity:
        zero_init(model)
    return model


def chain_oracle_report(model, x, neuron):
    """Compare isolated per-block gradient norms on an identity chain with the oracle.

    Returns a list of dicts (block_index, empirical, oracle, rel_error).
    """
    grads = block_input_grads(model, x, isolate_time=True)
    depth = len(grads)
    rows = []
    for rec, g in zip(model.records, grads):
        k = depth - rec.index
        if rec.kind == "SEW":
            pred = math.sqrt(g.size) * oracle_grad_product_sew(rec.g)
        else:
            phi = firing_rate(rec.s_in)
            pred = oracle_grad_norm(phi, k, neuron.surrogate, neuron.v_threshold, g[0].size, g.shape[0]).value
        emp = float(np.linalg.norm(g))
        rel = abs(emp - pred) / pred if pred > 0 else abs(emp)
        rows.append({"block_index": rec.index, "empirical": emp, "oracle": pred, "rel_error": rel})
    return rows


def with_surrogate(neuron, **changes):
    """Copy of ``neuron`` with surrogate fields replaced."""
    return replace(neuron, surrogate=replace(neuron.surrogate, **changes))

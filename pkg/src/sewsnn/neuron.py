"""Discrete-time spiking neurons: charge, fire, reset.

A neuron keeps a membrane potential ``V`` across time-steps.  At each step

    H[t] = f(V[t-1], X[t])                  (charge)
    S[t] = heaviside(H[t] - V_th)           (fire, heaviside(0) = 1)
    V[t] = H[t] * (1 - S[t]) + V_reset * S[t]   (hard reset)

with ``f`` the IF, LIF or PLIF charge function.  The heaviside step has no
useful derivative, so ``fire`` registers a surrogate derivative instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ParameterError
from .layers import Module

SURROGATE_KINDS = ("ArcTan", "Rectangular", "Constant1")
NEURON_KINDS = ("IF", "LIF", "PLIF")


@dataclass(frozen=True)
class SurrogateSpec:
    """Surrogate used in place of the heaviside derivative.

    ArcTan:      sigma'(x) = alpha / (2 (1 + (pi/2 alpha x)^2))
    Rectangular: sigma'(x) = 1/a for |x| < a/2, else 0
    Constant1:   sigma'(x) = 1

    ``scale`` multiplies the derivative (and primitive); alpha = 2 with
    scale = 1 + pi^2/4 gives sigma'(+-0.5) = 1.
    """

    kind: str = "ArcTan"
    alpha: float = 2.0
    a: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in SURROGATE_KINDS:
            raise ParameterError(f"unknown surrogate kind {self.kind!r}; expected one of {SURROGATE_KINDS}")
        if not self.alpha > 0:
            raise ParameterError(f"surrogate alpha must be positive, got {self.alpha}")
        if not self.a > 0:
            raise ParameterError(f"surrogate width a must be positive, got {self.a}")
        if not self.scale > 0:
            raise ParameterError(f"surrogate scale must be positive, got {self.scale}")

    def derivative(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "ArcTan":
            d = self.alpha / (2.0 * (1.0 + (0.5 * math.pi * self.alpha * x) ** 2))
        elif self.kind == "Rectangular":
            d = np.where(np.abs(x) < self.a / 2, 1.0 / self.a, 0.0)
        else:
            d = np.ones_like(x)
        return self.scale * d

    def primitive(self, x):
        """The smooth function whose derivative is ``derivative``."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "ArcTan":
            p = np.arctan(0.5 * math.pi * self.alpha * x) / math.pi + 0.5
        elif self.kind == "Rectangular":
            p = np.clip(x / self.a + 0.5, 0.0, 1.0)
        else:
            p = x + 0.5
        return self.scale * p


@dataclass(frozen=True)
class NeuronSpec:
    """Neuron kind and constants.  ``tau`` is the initial value for PLIF."""

    kind: str = "IF"
    v_threshold: float = 1.0
    v_reset: float = 0.0
    tau: float = 2.0
    detach_reset: bool = True
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)

    def __post_init__(self):
        if self.kind not in NEURON_KINDS:
            raise ParameterError(f"unknown neuron kind {self.kind!r}; expected one of {NEURON_KINDS}")
        if not self.v_threshold > self.v_reset:
            raise ParameterError(f"v_threshold ({self.v_threshold}) must exceed v_reset ({self.v_reset})")
        if self.kind == "LIF" and not self.tau >= 1:
            raise ParameterError(f"LIF tau must be >= 1, got {self.tau}")
        if self.kind == "PLIF" and not self.tau > 1:
            raise ParameterError(f"PLIF initial tau must be > 1, got {self.tau}")


def charge(spec, v_prev, x, tau=None):
    """Membrane potential after integrating input ``x``.

    ``tau`` overrides ``spec.tau`` and may be a Tensor (PLIF).
    """
    if spec.kind == "IF":
        return ad.add(v_prev, x)
    tau = spec.tau if tau is None else tau
    tau_vals = tau.data if isinstance(tau, Tensor) else np.asarray(tau)
    if np.any(tau_vals <= 0):
        raise ParameterError(f"membrane time constant must be positive, got {tau_vals}")
    leak = ad.sub(x, ad.sub(v_prev, spec.v_reset))
    return ad.add(v_prev, ad.div(leak, tau))


def fire(h, v_th, surrogate, smooth=False):
    """Spike where ``h >= v_th``; backward multiplies by sigma'(h - v_th).

    With ``smooth=True`` the forward value is the surrogate primitive instead of
    the step, which makes the whole path differentiable for gradient checks.
    """
    h = ad.as_tensor(h)
    x = h.data - v_th
    out = surrogate.primitive(x) if smooth else (x >= 0).astype(np.float64)
    return ad.custom_op("spike", out, (h,), lambda g: (g * surrogate.derivative(x),))


def reset(h, s, v_reset, detach):
    """Hard reset ``V = H (1 - S) + V_reset S``; ``detach`` severs S here only."""
    s = ad.detach(s) if detach else ad.as_tensor(s)
    return ad.add(ad.mul(h, ad.sub(1.0, s)), ad.mul(v_reset, s))


def step_sequence(spec, x_seq, tau=None, smooth=False):
    """Run the neuron over a (T, ...) input sequence from a resting state.

    Returns the spike train with the same shape as ``x_seq``.
    """
    x_seq = ad.as_tensor(x_seq)
    v = Tensor._wrap(np.full(x_seq.shape[1:], float(spec.v_reset)))
    spikes = []
    for t in range(x_seq.shape[0]):
        h = charge(spec, v, x_seq[t], tau)
        s = fire(h, spec.v_threshold, spec.surrogate, smooth)
        v = reset(h, s, spec.v_reset, spec.detach_reset)
        spikes.append(s)
    return ad.stack(spikes, axis=0)


class NeuronLayer(Module):
    """Multi-step spiking neuron layer; state resets for every input sequence.

    PLIF keeps one unconstrained scalar ``w`` per layer and uses
    ``tau = 1 + exp(w)``, a strictly increasing map onto (1, inf), so
    ``1 / tau = sigmoid(-w)``.
    """

    def __init__(self, spec):
        self.spec = spec
        self.smooth = False
        self.w = Parameter(math.log(spec.tau - 1.0)) if spec.kind == "PLIF" else None

    @property
    def tau(self):
        if self.spec.kind == "PLIF":
            return 1.0 + math.exp(float(self.w.data))
        return self.spec.tau

    def forward(self, x_seq):
        tau = None
        if self.w is not None:
            # 1 / sigmoid(-w) = 1 + exp(w)
            tau = ad.div(1.0, ad.sigmoid(ad.neg(self.w)))
        return step_sequence(self.spec, x_seq, tau, self.smooth)

    def __repr__(self):
        return f"NeuronLayer({self.spec.kind}, v_th={self.spec.v_threshold})"

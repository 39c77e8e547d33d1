"""Gradient amplitude along deep identity chains, measured and predicted.

Run: python demos/gradient_regimes.py
"""

# %%
import math

import numpy as np

from sewsnn import NeuronSpec, SurrogateSpec
from sewsnn.analysis import chain_oracle_report, grad_norm_regime, make_chain, trace_gradients

rng = np.random.default_rng(0)
T, B, W, DEPTH = 4, 8, 16, 24
x = (rng.random((T, B, W)) < 0.5).astype(np.float64)

SETTINGS = {
    "ArcTan a=2, V_th=1": NeuronSpec("IF", 1.0, surrogate=SurrogateSpec("ArcTan", alpha=2.0)),
    "ArcTan a=2, V_th=0.5": NeuronSpec("IF", 0.5, surrogate=SurrogateSpec("ArcTan", alpha=2.0)),
    "ArcTan a=3, V_th=1": NeuronSpec("IF", 1.0, surrogate=SurrogateSpec("ArcTan", alpha=3.0)),
    "scaled ArcTan, V_th=0.5": NeuronSpec(
        "IF", 0.5, surrogate=SurrogateSpec("ArcTan", alpha=2.0, scale=1 + math.pi**2 / 4)
    ),
}

# %% [markdown]
# Spiking-basic chains multiply one surrogate factor per block, so unless
# both factors equal one the norm drifts with depth.  SEW chains multiply by
# exactly one.

# %%
print(f"{'setting':26s} {'block':6s} {'regime':18s} {'shallow':>10s} {'deep':>8s} {'max err':>9s}")
for name, neuron in SETTINGS.items():
    for kind in ("Basic", "SEW"):
        model = make_chain(kind, DEPTH, W, g="ADD", neuron=neuron, T=T)
        rows = chain_oracle_report(model, x, neuron)
        regime = grad_norm_regime(neuron.surrogate, neuron.v_threshold) if kind == "Basic" else "one"
        err = max(r["rel_error"] for r in rows)
        print(f"{name:26s} {kind:6s} {regime:18s} {rows[0]['empirical']:10.3g} {rows[-1]['empirical']:8.3g} {err:9.1e}")

# %% [markdown]
# With the scaled surrogate both factors are one, so a spiking-basic chain
# is flat too.  Whether such a network actually trains is a separate
# question; the last cell runs a few epochs on a small task to see.

# %%
from sewsnn import DivergenceError, SyntheticSpec, TrainConfig, build, generate_synthetic, parse_arch, train

data = generate_synthetic(SyntheticSpec("moving-bar", samples=96, size=6, T=4))
for name in ("ArcTan a=2, V_th=1", "scaled ArcTan, V_th=0.5"):
    neuron = SETTINGS[name]
    spec = parse_arch("FC16-BN-IF-{Basic Block (c16)}*8-FC4", (2, 6, 6), T=4, neuron=neuron)
    try:
        history = train(build(spec, 0), data, TrainConfig(lr=0.05, epochs=10, batch_size=16))
    except DivergenceError as exc:
        print(f"{name:26s} diverged after {len(exc.history)} epochs")
        continue
    losses = [r.train_loss for r in history]
    status = "converging" if losses[-1] < losses[0] else "stalled"
    print(f"{name:26s} loss {losses[0]:.3f} -> {losses[-1]:.3f}  ({status})")

# %% [markdown]
# Random initialisation instead of the identity setup, for comparison.

# %%
for kind in ("Basic", "SEW"):
    model = make_chain(kind, DEPTH, W, g="ADD", identity=False, seed=3)
    trace = trace_gradients(model, x)
    print(f"random {kind:6s} trend {trace.trend():10s} spread {trace.spread():.3g}")

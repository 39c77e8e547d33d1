"""Which residual blocks can pass a spike train through unchanged?

Run: python demos/identity_mapping.py
"""

# %%
import numpy as np

import sewsnn.autodiff as ad
from sewsnn import NeuronSpec, build, parse_arch, zero_init

rng = np.random.default_rng(0)
x = (rng.random((6, 4, 16)) < 0.4).astype(np.float64)  # (T, batch, features)

# %% [markdown]
# Zeroing the last BN of every block leaves only the shortcut path.  A SEW
# block then outputs exactly its input.  A spiking-basic block still pushes
# the sum through a neuron, which is harmless for IF with V_th <= 1 but not
# for a leaky neuron.

# %%
for arch in ("{SEW Block (c16, ADD)}*8", "{SEW Block (c16, IAND)}*8", "{Basic Block (c16)}*8"):
    for kind in ("IF", "LIF"):
        spec = parse_arch(arch, (16,), T=6, neuron=NeuronSpec(kind))
        model = zero_init(build(spec, seed=1))
        with ad.no_grad():
            out = model(x).data
        print(f"{arch:28s} {kind:3s}  identity: {np.array_equal(out, x)}  out rate {out.mean():.3f}")

# %% [markdown]
# Inside the AND variant the block's own neuron has to fire on every step,
# which the identity setup arranges by shifting that BN to V_th.

# %%
spec = parse_arch("{SEW Block (c16, AND)}*8", (16,), T=6)
model = zero_init(build(spec))
with ad.no_grad():
    model.features(x, capture=True)
print("AND chain, A firing rates:", [float(r.a.data.mean()) for r in model.records])

"""Train a small SEW network on the moving-bar task and look at its firing rates.

Run: python demos/train_moving_bar.py
"""

# %%
from sewsnn import SyntheticSpec, TrainConfig, build, generate_synthetic, parse_arch, train
from sewsnn.analysis import trace_firing_rates
from sewsnn.data import train_test_split
from sewsnn.train import evaluate

data = generate_synthetic(SyntheticSpec("moving-bar", samples=256, size=8, T=4, noise=0.05))
train_set, test_set = train_test_split(data, 0.25)
print("train", len(train_set), "test", len(test_set), "frame", train_set.frame_shape)

# %%
spec = parse_arch("FC32-BN-IF-{SEW Block (c32, ADD)}*4-FC4", train_set.frame_shape, T=4)
model = build(spec, seed=0)
print(spec.arch, "|", model.num_parameters(), "parameters")

history = train(model, train_set, TrainConfig(lr=0.05, epochs=20, batch_size=16, zero_init=True), test_set)
for r in history[::4] + history[-1:]:
    print(f"epoch {r.epoch:2d}  loss {r.train_loss:.3f}  train {r.train_acc:.3f}  test {r.test_acc:.3f}")

# %% [markdown]
# After training, each block's own neuron fires sparsely while the block
# output (a count, for ADD) mostly carries the shortcut.

# %%
x = test_set.x[:32].swapaxes(0, 1).astype(float)
model.eval()
trace = trace_firing_rates(model, x)
for i, a, o in zip(trace.block_index, trace.a_rate, trace.o_rate):
    print(f"block {i}: A rate {a:.3f}  O mean {o:.3f}")
print("final test accuracy", evaluate(model, test_set)[0])

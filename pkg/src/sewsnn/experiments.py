"""Frozen desk-scale experiments on the moving-bar dataset.

Both experiments train fully connected chains ``FC32-BN-IF-{block}*depth-FC4``
on 2x8x8 polarity frames with T = 4.  Seeds, data and hyper-parameters are
fixed here so the acceptance suite, the demos and the README numbers all come
from the same runs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import SyntheticSpec, generate_synthetic, train_test_split
from .network import build, parse_arch
from .train import TrainConfig, train

INPUT_SHAPE = (2, 8, 8)


@dataclass(frozen=True)
class ChainExperiment:
    data: SyntheticSpec
    test_fraction: float
    config: TrainConfig
    depths: tuple
    seeds: tuple = (0, 1, 2)
    width: int = 32

    def arch(self, kind, depth, g=None):
        block = f"SEW Block (c{self.width}, {g})" if kind == "SEW" else f"{kind} Block (c{self.width})"
        classes = self.data.num_classes
        return f"FC{self.width}-BN-IF-{{{block}}}*{depth}-FC{classes}"

    def datasets(self):
        return train_test_split(generate_synthetic(self.data), self.test_fraction, seed=self.data.seed)

    def run(self, kind, depth, seed, g=None):
        """Train one chain; returns its EpochRecord history."""
        train_set, test_set = self.datasets()
        spec = parse_arch(self.arch(kind, depth, g), INPUT_SHAPE, T=self.data.T)
        model = build(spec, seed)
        return train(model, train_set, replace(self.config, seed=seed), test_set)


DEGRADATION = ChainExperiment(
    data=SyntheticSpec("moving-bar", samples=384, num_classes=4, T=4, size=8, noise=0.05, seed=0),
    test_fraction=1 / 3,
    config=TrainConfig(lr=0.05, epochs=40, batch_size=16, T=4, zero_init=True),
    depths=(8, 24),
)

ABLATION = ChainExperiment(
    data=SyntheticSpec("moving-bar", samples=384, num_classes=4, T=4, size=8, noise=0.1, seed=0),
    test_fraction=1 / 3,
    config=TrainConfig(lr=0.05, epochs=30, batch_size=16, T=4, zero_init=True),
    depths=(16,),
)


def run_degradation(experiment=DEGRADATION):
    """Final training loss per (kind, depth, seed) for SEW-ADD and spiking-basic chains."""
    out = {}
    for kind, g in (("SEW", "ADD"), ("Basic", None)):
        for seed in experiment.seeds:
            for depth in experiment.depths:
                out[(kind, depth, seed)] = experiment.run(kind, depth, seed, g)[-1].train_loss
    return out


def degradation_verdict(losses, experiment=DEGRADATION, margin=0.05):
    shallow, deep = experiment.depths
    sew_ok = all(losses[("SEW", deep, s)] <= losses[("SEW", shallow, s)] + margin for s in experiment.seeds)
    worse = sum(losses[("Basic", deep, s)] > losses[("Basic", shallow, s)] for s in experiment.seeds)
    return sew_ok, worse


def run_ablation(experiment=ABLATION):
    """Final test accuracy per g, one entry per seed."""
    depth = experiment.depths[0]
    return {
        g: [experiment.run("SEW", depth, seed, g)[-1].test_acc for seed in experiment.seeds]
        for g in ("ADD", "IAND", "AND")
    }


def ablation_verdict(accs):
    """Mean-over-seeds ordering ADD >= IAND > AND."""
    mean = {g: float(np.mean(v)) for g, v in accs.items()}
    return mean["ADD"] >= mean["IAND"] > mean["AND"], mean

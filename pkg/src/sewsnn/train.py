"""SGD-with-momentum training with cosine/step schedules and random temporal delete."""

from __future__ import annotations

import configparser
import csv
import logging
import math
import os
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DivergenceError, NumericError
from .network import zero_init

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "lr", "train_loss", "train_acc", "test_acc")


# --- config ----------------------------------------------------------------


def read_config(path):
    """Read a flat ``key = value`` file into a dict of strings ('#' comments allowed)."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    with open(path) as fh:
        parser.read_string("[config]\n" + fh.read())
    return dict(parser["config"])


def _convert(key, value, typ):
    if not isinstance(value, str):
        return typ(value)
    try:
        if typ is bool:
            lowered = value.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return typ(value.strip())
    except ValueError:
        raise ConfigurationError(f"{key}: cannot read {value!r} as {typ.__name__}", key=key) from None


@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-parameters.  ``scheduler`` is ``cosine`` or ``step``."""

    lr: float = 0.1
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 16
    scheduler: str = "cosine"
    t_max: int = 0
    t_step: int = 64
    gamma: float = 0.1
    T: int = 4
    T_train: int = 0
    seed: int = 0
    zero_init: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}", key="lr")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0", key="epochs")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1", key="batch_size")
        if self.scheduler not in ("cosine", "step"):
            raise ConfigurationError(f"scheduler must be 'cosine' or 'step', got {self.scheduler!r}", key="scheduler")
        if self.T < 1:
            raise ConfigurationError("T must be >= 1", key="T")
        if not 0 <= self.T_train <= self.T:
            raise ConfigurationError(f"T_train must satisfy 0 < T_train <= T ({self.T})", key="T_train")

    @property
    def train_steps(self):
        """Frames seen per training sample (``T_train``; 0 means the full T)."""
        return self.T_train or self.T

    @property
    def schedule(self):
        if self.scheduler == "cosine":
            return CosineAnnealing(self.lr, self.t_max or max(self.epochs, 1))
        return StepLR(self.lr, self.t_step, self.gamma)

    @classmethod
    def from_mapping(cls, mapping):
        """Build from a dict of strings, ignoring keys that are not TrainConfig fields."""
        kwargs = {}
        for f in fields(cls):
            if f.name in mapping:
                kwargs[f.name] = _convert(f.name, mapping[f.name], type(f.default))
        return cls(**kwargs)


@dataclass(frozen=True)
class CosineAnnealing:
    lr: float
    t_max: int


@dataclass(frozen=True)
class StepLR:
    lr: float
    t_step: int
    gamma: float


def lr_at(schedule, epoch):
    if isinstance(schedule, CosineAnnealing):
        return schedule.lr * (1 + math.cos(math.pi * epoch / schedule.t_max)) / 2
    return schedule.lr * schedule.gamma ** (epoch // schedule.t_step)


# --- optimizer -------------------------------------------------------------


def sgd_step(params, grads, velocities, lr, momentum):
    """In place: ``v = momentum * v + grad``; ``p -= lr * v``."""
    for i, g in enumerate(grads):
        if g is not None and not np.isfinite(g).all():
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise NumericError(f"parameter {i} (shape {np.shape(g)}) has {bad} non-finite gradient entries")
    for p, g, v in zip(params, grads, velocities):
        if g is None:
            g = 0.0
        v *= momentum
        v += g
        p.data -= lr * v


class SGD:
    def __init__(self, params, momentum=0.9):
        self.params = list(params)
        self.momentum = momentum
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr):
        sgd_step(self.params, [p.grad for p in self.params], self.velocities, lr, self.momentum)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# --- augmentation ----------------------------------------------------------


def random_temporal_delete(x_seq, T_train, rng):
    """Keep ``T_train`` of the T frames (axis 0), in order, chosen uniformly."""
    x_seq = np.asarray(x_seq)
    T = x_seq.shape[0]
    if not 0 < T_train <= T:
        raise ConfigurationError(f"T_train must satisfy 0 < T_train <= {T}", key="T_train")
    if T_train == T:
        return x_seq
    keep = np.sort(rng.choice(T, size=T_train, replace=False))
    return x_seq[keep]


# --- loop ------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_acc: float = float("nan")

    def row(self):
        return [self.epoch, self.lr, self.train_loss, self.train_acc, self.test_acc]


def _time_major(x):
    return np.ascontiguousarray(np.swapaxes(np.asarray(x, dtype=np.float64), 0, 1))


def evaluate(model, dataset, batch_size=64):
    """Accuracy and mean loss over the full sequence length, in eval mode."""
    if len(dataset) == 0:
        return float("nan"), float("nan")
    model.eval()
    correct = 0
    total_loss = 0.0
    with ad.no_grad():
        for start in range(0, len(dataset), batch_size):
            xb = dataset.x[start : start + batch_size]
            yb = dataset.y[start : start + batch_size]
            logits = model(_time_major(xb))
            total_loss += ad.cross_entropy(logits, yb).item() * len(yb)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
    model.train()
    return correct / len(dataset), total_loss / len(dataset)


def _append_csv(path, record):
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(METRICS_HEADER)
        writer.writerow(record.row())


def train(model, train_set, config, test_set=None, metrics_path=None):
    """Train ``model`` in place; returns one EpochRecord per epoch.

    With ``config.zero_init`` every non-downsample block is first configured
    as an identity.  Raises DivergenceError (carrying the history so far) on a non-finite loss.
    """
    if config.zero_init:
        zero_init(model)
    rng = np.random.default_rng(config.seed)
    opt = SGD(model.parameters(), config.momentum)
    schedule = config.schedule
    history = []
    model.train()
    n = len(train_set)
    for epoch in range(config.epochs):
        lr = lr_at(schedule, epoch)
        order = rng.permutation(n)
        losses, correct = [], 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = _time_major(train_set.x[idx])
            if config.train_steps < xb.shape[0]:
                xb = np.stack(
                    [random_temporal_delete(xb[:, i], config.train_steps, rng) for i in range(xb.shape[1])],
                    axis=1,
                )
            yb = train_set.y[idx]
            opt.zero_grad()
            try:
                logits = model(xb)
                loss = ad.cross_entropy(logits, yb)
                loss.backward()
                opt.step(lr)
            except NumericError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}", history) from exc
            losses.append(loss.item())
            correct += int((logits.data.argmax(axis=1) == yb).sum())
        record = EpochRecord(epoch, lr, float(np.mean(losses)) if losses else float("nan"), correct / max(n, 1))
        if test_set is not None:
            record.test_acc = evaluate(model, test_set)[0]
        history.append(record)
        if metrics_path is not None:
            _append_csv(metrics_path, record)
        log.info(
            "epoch %d lr %.4g loss %.4f train %.3f test %.3f",
            epoch,
            lr,
            record.train_loss,
            record.train_acc,
            record.test_acc,
        )
    return history

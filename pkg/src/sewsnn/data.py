"""Frame datasets: the SEWF binary format and synthetic generators.

SEWF layout (little-endian)::

    offset  size  field
    0       4     magic  b"SEWF"
    4       2     version (u16, currently 1)
    6       24    u32 samples, T, C, H, W, classes
    30      ...   per sample: T*C*H*W float32 frames, then u32 label
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DatasetError, LabelError, MagicError, TruncationError, VersionError

MAGIC = b"SEWF"
VERSION = 1
_HEADER = struct.Struct("<4sH6I")


@dataclass(frozen=True)
class FrameDataset:
    """``x`` is (N, T, C, H, W) float32, ``y`` is (N,) int64."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.x.ndim != 5:
            raise DatasetError(f"frames must be (N, T, C, H, W), got {self.x.shape}", field="frames")
        if self.y.shape != (self.x.shape[0],):
            raise DatasetError(f"{len(self.y)} labels for {self.x.shape[0]} samples", field="labels")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise LabelError(f"labels must lie in [0, {self.num_classes})", field="label")

    def __len__(self):
        return self.x.shape[0]

    @property
    def T(self):
        return self.x.shape[1]

    @property
    def frame_shape(self):
        return self.x.shape[2:]

    def subset(self, idx):
        return FrameDataset(self.x[idx], self.y[idx], self.num_classes)

    def time_averaged(self):
        """Same samples collapsed to a single mean frame (T = 1)."""
        return FrameDataset(self.x.mean(axis=1, keepdims=True), self.y, self.num_classes)


def save_frames(dataset, path):
    n, t, c, h, w = dataset.x.shape
    record = np.dtype([("x", "<f4", (t, c, h, w)), ("y", "<u4")])
    body = np.empty(n, dtype=record)
    body["x"] = dataset.x
    body["y"] = dataset.y
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, t, c, h, w, dataset.num_classes))
        fh.write(body.tobytes())


def load_frames(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TruncationError(
            f"header truncated: expected {_HEADER.size} bytes, got {len(raw)}",
            expected=_HEADER.size,
            actual=len(raw),
            field="header",
        )
    magic, version, n, t, c, h, w, classes = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}, expected {MAGIC!r}", field="magic")
    if version != VERSION:
        raise VersionError(f"unsupported version {version}", field="version")
    if min(t, c, h, w) == 0:
        raise DatasetError(f"zero dimension in T, C, H, W = {(t, c, h, w)}", field="shape")
    if classes == 0:
        raise DatasetError("class count must be positive", field="classes")
    record = np.dtype([("x", "<f4", (t, c, h, w)), ("y", "<u4")])
    expected = _HEADER.size + n * record.itemsize
    if len(raw) < expected:
        raise TruncationError(
            f"payload truncated: expected {expected} bytes, got {len(raw)}",
            expected=expected,
            actual=len(raw),
            field="payload",
        )
    if len(raw) > expected:
        raise DatasetError(f"{len(raw) - expected} trailing bytes after {n} samples", field="payload")
    body = np.frombuffer(raw, dtype=record, count=n, offset=_HEADER.size)
    labels = body["y"].astype(np.int64)
    bad = np.flatnonzero(labels >= classes)
    if bad.size:
        raise LabelError(f"sample {bad[0]} has label {labels[bad[0]]} >= classes {classes}", field="label")
    return FrameDataset(body["x"].copy(), labels, int(classes))


# --- synthetic generators --------------------------------------------------

GENERATORS = ("temporal-pattern", "moving-bar", "static-blobs")


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "moving-bar"
    samples: int = 256
    num_classes: int = 4
    T: int = 4
    size: int = 8
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise DatasetError(f"unknown generator {self.kind!r}; expected one of {GENERATORS}", field="kind")
        if self.samples < 0 or self.T < 1 or self.size < 2 or self.num_classes < 2:
            raise DatasetError("samples >= 0, T >= 1, size >= 2 and num_classes >= 2 required", field="spec")
        if not 0 <= self.noise <= 1:
            raise DatasetError(f"noise must lie in [0, 1], got {self.noise}", field="noise")


def _flip(frames, p, rng):
    if p == 0:
        return frames
    mask = rng.random(frames.shape) < p
    return np.where(mask, 1.0 - frames, frames)


def _moving_bar(spec, rng):
    """Two polarity channels: ON where the bar arrives, OFF where it left.

    Classes are motion directions: right, left, down, up.
    """
    if spec.num_classes > 4:
        raise DatasetError("moving-bar supports at most 4 classes", field="num_classes")
    n, t, s = spec.samples, spec.T, spec.size
    y = rng.integers(spec.num_classes, size=n)
    start = rng.integers(s, size=n)
    x = np.zeros((n, t, 2, s, s))
    step = np.array([1, -1, 1, -1])
    for i in range(n):
        d = step[y[i]]
        for k in range(t):
            cur = (start[i] + d * k) % s
            prev = (start[i] + d * (k - 1)) % s
            if y[i] < 2:
                x[i, k, 0, :, cur] = 1.0
                x[i, k, 1, :, prev] = 1.0
            else:
                x[i, k, 0, cur, :] = 1.0
                x[i, k, 1, prev, :] = 1.0
    return _flip(x, spec.noise, rng), y


def _temporal_pattern(spec, rng):
    """Every class shows the same T frames, only in a class-specific order."""
    n, t, s = spec.samples, spec.T, spec.size
    perms = list(itertools.permutations(range(t)))
    if spec.num_classes > len(perms):
        raise DatasetError(f"T={t} allows at most {len(perms)} orderings", field="num_classes")
    frames = (rng.random((t, 1, s, s)) < 0.3).astype(np.float64)
    chosen = [perms[0], perms[-1]]
    rest = [p for p in perms[1:-1]]
    extra = rng.permutation(len(rest))[: max(0, spec.num_classes - 2)]
    chosen += [rest[i] for i in extra]
    order = np.array(chosen[: spec.num_classes])
    y = rng.integers(spec.num_classes, size=n)
    x = frames[order[y]]
    return _flip(x, spec.noise, rng), y


def _static_blobs(spec, rng):
    """A Gaussian blob at a class-specific position, constant over time."""
    n, t, s = spec.samples, spec.T, spec.size
    k = spec.num_classes
    angles = 2 * np.pi * np.arange(k) / k
    radius = s / 4
    centers = np.stack([s / 2 - 0.5 + radius * np.sin(angles), s / 2 - 0.5 + radius * np.cos(angles)], axis=1)
    rows, cols = np.mgrid[0:s, 0:s]
    width = max(s / 8, 0.75)
    templates = np.exp(-((rows - centers[:, 0, None, None]) ** 2 + (cols - centers[:, 1, None, None]) ** 2) / (2 * width**2))
    y = rng.integers(k, size=n)
    amp = rng.uniform(0.5, 1.0, size=n)
    img = amp[:, None, None] * templates[y]
    if spec.noise:
        img = img + rng.normal(0.0, spec.noise, size=img.shape)
    x = np.broadcast_to(img[:, None, None], (n, t, 1, s, s))
    return x, y


def generate_synthetic(spec):
    """Deterministic dataset for ``spec``; the same spec always gives the same bits."""
    rng = np.random.default_rng(spec.seed)
    fn = {"moving-bar": _moving_bar, "temporal-pattern": _temporal_pattern, "static-blobs": _static_blobs}[spec.kind]
    x, y = fn(spec, rng)
    return FrameDataset(np.ascontiguousarray(x, dtype=np.float32), y.astype(np.int64), spec.num_classes)


def train_test_split(dataset, test_fraction=0.25, seed=0):
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(dataset))
    n_test = int(round(len(dataset) * test_fraction))
    return dataset.subset(np.sort(idx[n_test:])), dataset.subset(np.sort(idx[:n_test]))
